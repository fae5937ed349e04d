from .model import ABLATION_ROWS, Components, INSINet, NetworkConfig

__all__ = ["ABLATION_ROWS", "Components", "INSINet", "NetworkConfig"]
