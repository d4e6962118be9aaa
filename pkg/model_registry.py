from typing import Dict, List, Optional

from fit_models import BaseModel


class ModelRegistry:
    """Registry of built-in least-squares models"""
    _models: Dict[str, BaseModel] = {}

    @classmethod
    def register(cls, model: BaseModel, name: Optional[str] = None):
        """Register a model under its config name"""
        cls._models[name or model.config.name] = model

    @classmethod
    def get_model(cls, name: str) -> Optional[BaseModel]:
        """Get model by name"""
        return cls._models.get(name)

    @classmethod
    def list_models(cls) -> List[str]:
        """List all registered models"""
        return sorted(cls._models.keys())


def get_model_by_name(name: str) -> Optional[BaseModel]:
    """Get model by name"""
    return ModelRegistry.get_model(name)


def list_models() -> List[str]:
    """List all registered models"""
    return ModelRegistry.list_models()


# Register built-in models
from fit_models import ExponentialDecay, LorentzianPeak, Quadratic, ZeroInterceptLine  # noqa: E402
from cavity_optics import ReflectanceModel  # noqa: E402

ModelRegistry.register(ZeroInterceptLine())
ModelRegistry.register(Quadratic())
ModelRegistry.register(ExponentialDecay())
ModelRegistry.register(LorentzianPeak())
ModelRegistry.register(ReflectanceModel())
