"""Equivariant BV calculus and localization checks on small compact manifolds."""

import os

import jax

jax.config.update("jax_enable_x64", True)

# Composite operators compile slowly; reuse compiled executables across runs.
_cache = os.environ.get("BVLOC_JAX_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "bvloc-jax"))
if _cache:
    jax.config.update("jax_compilation_cache_dir", _cache)
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.05)
    jax.config.update("jax_persistent_cache_min_entry_size_bytes", 0)

__version__ = "0.1.0"
