"""Binary tensor files and dataset manifests.

Every file boundary in this project (features in, encodings out, checkpoint
parameters, gallery indexes) uses one little-endian binary tensor format, so
round trips are bit-exact and other languages can produce or consume the
same files from a one-paragraph spec.
"""

import tempfile
from pathlib import Path

import numpy as np

from mmretrieval.data import ManifestRecord, load_manifest, write_manifest
from mmretrieval.tensorfile import TensorFormatError, read_tensor, tensor_bytes, write_tensor

workdir = Path(tempfile.mkdtemp(prefix="mmr_demo_"))
print(f"working in {workdir}\n")

# -- round trip, including the awkward values ------------------------------
arr = np.array([[1.5, -0.0, 2.0 ** -149], [3.25, -7.0, 1e38]], dtype=np.float32)
write_tensor(workdir / "example.mmrt", arr)
back = read_tensor(workdir / "example.mmrt")
print("wrote and re-read a 2x3 tensor:")
print(back)
print(f"bit-exact: {back.tobytes() == arr.tobytes()} "
      f"(negative zero preserved: {np.signbit(back[0, 1])})\n")

# -- the header is self-describing ------------------------------------------
blob = tensor_bytes(arr)
print(f"serialized size: {len(blob)} bytes = 10 header + {8 * arr.ndim} dims + "
      f"{4 * arr.size} payload")
print(f"magic/version/dtype/ndim: {blob[:4]} {blob[4]} {blob[8]} {blob[9]}\n")

# -- malformed input is rejected with a byte offset --------------------------
try:
    read_tensor_bytes = bytearray(blob)
    read_tensor_bytes[:4] = b"XXXX"
    from mmretrieval.tensorfile import tensor_from_bytes
    tensor_from_bytes(bytes(read_tensor_bytes))
except TensorFormatError as exc:
    print(f"corrupted magic correctly rejected: {exc}\n")

# -- manifests tie samples to per-modality files -----------------------------
write_tensor(workdir / "m0.mmrt", np.zeros((16, 48), dtype=np.float32))
write_tensor(workdir / "t0.mmrt", np.zeros((8, 64), dtype=np.float32))
write_manifest(workdir / "manifest.jsonl", [
    ManifestRecord("sample0", "train", {"motion": "m0.mmrt", "text": "t0.mmrt"}),
])
manifest = load_manifest(workdir / "manifest.jsonl")
sample = manifest.load_sample(manifest.records[0])
print("manifest line ->", (workdir / "manifest.jsonl").read_text().strip())
print(f"loaded motion {sample.sequences['motion'].tokens.shape}, "
      f"text {sample.sequences['text'].tokens.shape}")
