"""neuralvol: compressed neural scalar volumes with interactive rendering.

Train a multi-resolution grid encoder plus a small MLP to stand in for a
dense scalar volume, then ray-march or path-trace the learned field directly,
with macro-cell majorants accelerating both.  See the CLI (`neuralvol -h`)
for the end-to-end workflows and `neuralvol.service` for the live
training-while-rendering session.
"""

__version__ = "0.1.0"
