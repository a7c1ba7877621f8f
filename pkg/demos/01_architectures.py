"""Tour of the shipped architectures and the symbolic summary table.

Run:  python3 demos/01_architectures.py

Nothing here allocates parameter storage: `summarize` walks the layer specs
symbolically, so even the 337-million-parameter single-conv MRI baseline
prints instantly.
"""

from voxcnn import graph
from voxcnn.fixtures import available, load_fixture

print("Shipped architecture files:", ", ".join(available()))
print()

# The deepest PET classifier: eight conv layers, batch norm, dropout, and an
# L2 penalty of 1e-5 on every conv weight tensor.
print(graph.format_summary(graph.summarize(load_fixture("pet_8"))))
print()

# The nine-conv MRI model swaps the flatten+dense funnel for global average
# pooling, which is why it needs only 5.3M parameters at full resolution.
print(graph.format_summary(graph.summarize(load_fixture("mri_9"))))
print()

# A 3D ResNet-18 built programmatically: stem, four two-block stages
# (64/128/256/512 channels), global average pooling, 3-way softmax.
resnet = graph.build_resnet18_3d((64, 128, 128, 1))
summary = graph.summarize(resnet)
print(f"ResNet-18-3D: {summary.total:,} parameters "
      f"({summary.non_trainable:,} non-trainable batch-norm stats)")

# Two-branch fusion: a PET feature extractor and the ResNet backbone,
# concatenated and classified jointly.
print(graph.format_summary(graph.summarize(load_fixture("two_branch"))))
