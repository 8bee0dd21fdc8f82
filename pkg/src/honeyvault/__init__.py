"""Honey-template vaults for face biometrics.

A Gaussian face-space fitted from shape/texture vectors, shell sampling of
synthetic templates with minimum separation, verification, a two-server
honeychecker, and privacy audits.
"""
from honeyvault.authn import AuthDecision, SimilarityTransform, calibrate_threshold, verify
from honeyvault.errors import HoneyVaultError
from honeyvault.facespace import (
    FaceSpace,
    build_face_space,
    build_shape_model,
    build_texture_model,
    decode,
    encode,
    fit_face_space,
    fit_pca,
    shell_normalize,
)
from honeyvault.synth import SeparationIndex, generate_honey, make_toy_corpus, sample_template
from honeyvault.vault import Vault, create_vault, deserialize, inflate, serialize

__version__ = "0.1.0"

__all__ = [
    "AuthDecision",
    "FaceSpace",
    "HoneyVaultError",
    "SeparationIndex",
    "SimilarityTransform",
    "Vault",
    "build_face_space",
    "build_shape_model",
    "build_texture_model",
    "calibrate_threshold",
    "create_vault",
    "decode",
    "deserialize",
    "encode",
    "fit_face_space",
    "fit_pca",
    "generate_honey",
    "inflate",
    "make_toy_corpus",
    "sample_template",
    "serialize",
    "shell_normalize",
    "verify",
]
