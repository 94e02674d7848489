"""Utility modules"""
from .config import Config
from .seeding import ResolvedSeedState, derive_seed
