"""Discrete-event simulator of a Tensix-style accelerator with Jacobi stencil kernels."""

from .cost import CostParams, default_params, energy, gpt_per_s, predict_transaction
from .dram import Dram, DramConfig, Interleaved, SingleBank, WriteMode
from .numerics import BF16, Tile32, add_tiles, fp32_to_bf16, mul_tiles, scalar_tile
from .tensix import Ablation, CoreGrid, Deadlock, KernelFault, KernelProgram, RunReport, Simulator, launch

__version__ = "0.1.0"

__all__ = [
    "Ablation", "BF16", "CoreGrid", "CostParams", "Deadlock", "Dram", "DramConfig", "Interleaved",
    "KernelFault", "KernelProgram", "RunReport", "SingleBank", "Simulator", "Tile32", "WriteMode",
    "add_tiles", "default_params", "energy", "fp32_to_bf16", "gpt_per_s", "launch", "mul_tiles",
    "predict_transaction", "scalar_tile",
]
