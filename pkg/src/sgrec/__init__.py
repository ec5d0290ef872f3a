"""Group-recognition machinery for set-prediction social group activity
recognition: query composition, divided self-attention, deformable decoding,
Hungarian set-matching losses, point-based member identification, and the
task's evaluation metrics."""

__version__ = "0.1.0"
