"""Framework-native checkpoint converter for the sparsity toolkit."""

from .convert import ExportError, ExportJob, build_manifest, export, resolve_source

__version__ = "0.1.0"
