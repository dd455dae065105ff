"""Fine-grained vulnerability detection over LLVM IR slices.

The pipeline extracts syntax-based candidates from C source, slices the
program's textual LLVM IR around each candidate, and scores the slices with
a bidirectional recurrent network whose pooling layers localize the
vulnerable lines.
"""

__version__ = "0.1.0"
