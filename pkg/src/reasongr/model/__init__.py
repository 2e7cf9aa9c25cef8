from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .lora import LoraAdapter, apply_adapted, fit_lora, init_lora
from .optim import OptimizerState, adam_step, clip_grad_norm
from .quant import QuantizedMatrix, dequantize, quantize_4bit
from .transformer import (
    DEFAULT_TARGETS,
    Batch,
    ModelDims,
    SeqModel,
    backward,
    decode_batch,
    encode_batch,
    forward,
    forward_backward,
    init_adapters,
    init_model,
    make_batch,
)

__all__ = [
    "Batch", "Checkpoint", "CheckpointError", "DEFAULT_TARGETS", "LoraAdapter", "ModelDims",
    "OptimizerState", "QuantizedMatrix", "SeqModel", "adam_step", "apply_adapted", "backward",
    "clip_grad_norm", "decode_batch", "dequantize", "encode_batch", "fit_lora", "forward",
    "forward_backward", "init_adapters", "init_lora", "init_model", "load_checkpoint",
    "make_batch", "quantize_4bit", "save_checkpoint",
]
