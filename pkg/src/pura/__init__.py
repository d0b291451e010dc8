"""Privacy-preserving face recognition over a twin-server threshold
Paillier pipeline.

The organisation enrolls an encrypted feature database split across two
non-colluding servers; a client probes it and learns only the clamped
minimum squared distance and the accept decision.  The heavy modular
arithmetic runs on a compiled libgmp core when available (see
``pura.BACKEND_NAME``) and falls back to pure Python otherwise.
"""

__version__ = "0.1.0"

from ._mathcore import BACKEND_NAME, available_backends
from .baseline import recognize_plain, squared_distance
from .batch import (
    batch_smul,
    batch_smul_once,
    batch_square,
    batch_square_once,
    mul_capacity,
    square_capacity,
)
from .encoding import (
    decode_signed,
    encode_signed,
    quantize,
    quantize_vector,
    read_feature_csv,
    threshold_raw,
    write_feature_csv,
)
from .engine import (
    LocalPipeline,
    ServerNode,
    encrypt_database,
    encrypt_threshold,
    local_pipeline,
    recognize,
)
from .errors import (
    CapacityError,
    ConnectionClosedError,
    DomainError,
    IntegrityError,
    KeyFormatError,
    MalformedFrameError,
    OversizeFrameError,
    ParameterError,
    ProtocolError,
    PuraError,
    RangeError,
    ResourceExhaustedError,
    TransportError,
    TransportTimeoutError,
)
from .paillier import (
    KeyMaterial,
    KeyShare,
    PrivateKey,
    PublicKey,
    dec,
    enc,
    hom_add,
    hom_add_plain,
    hom_neg,
    hom_scalar_mul,
    hom_scalar_mul_signed,
    hom_sub,
    key_file_payloads,
    keygen,
    pdec,
    public_key_from_doc,
    refresh,
    share_from_doc,
    tdec,
)
from .params import DEFAULT, PROFILES, QUANT_SCALE, TOY, TOY_E2E, ParamSet
from .pool import RandomnessPool
from .sessions import ProtocolContext, serve_connection
from .smin import smin2, smin_n
from .transport import (
    Listener,
    client_hello,
    connect_tcp,
    loopback_pair,
    server_hello,
)

__all__ = [
    "BACKEND_NAME",
    "available_backends",
    "__version__",
    # parameters
    "ParamSet",
    "DEFAULT",
    "TOY",
    "TOY_E2E",
    "PROFILES",
    "QUANT_SCALE",
    # cryptosystem
    "KeyMaterial",
    "KeyShare",
    "PrivateKey",
    "PublicKey",
    "keygen",
    "enc",
    "dec",
    "pdec",
    "tdec",
    "refresh",
    "hom_add",
    "hom_add_plain",
    "hom_neg",
    "hom_scalar_mul",
    "hom_scalar_mul_signed",
    "hom_sub",
    "key_file_payloads",
    "public_key_from_doc",
    "share_from_doc",
    # encoding
    "encode_signed",
    "decode_signed",
    "quantize",
    "quantize_vector",
    "threshold_raw",
    "read_feature_csv",
    "write_feature_csv",
    # protocols
    "ProtocolContext",
    "serve_connection",
    "RandomnessPool",
    "batch_square",
    "batch_square_once",
    "batch_smul",
    "batch_smul_once",
    "square_capacity",
    "mul_capacity",
    "smin2",
    "smin_n",
    # pipeline
    "encrypt_database",
    "encrypt_threshold",
    "recognize",
    "recognize_plain",
    "squared_distance",
    "ServerNode",
    "LocalPipeline",
    "local_pipeline",
    # transport
    "loopback_pair",
    "connect_tcp",
    "Listener",
    "client_hello",
    "server_hello",
    # errors
    "PuraError",
    "ParameterError",
    "KeyFormatError",
    "DomainError",
    "RangeError",
    "CapacityError",
    "ProtocolError",
    "IntegrityError",
    "ResourceExhaustedError",
    "TransportError",
    "TransportTimeoutError",
    "ConnectionClosedError",
    "MalformedFrameError",
    "OversizeFrameError",
]
