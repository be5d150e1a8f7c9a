"""maskvc: non-parallel voice conversion on log mel-spectrograms.

Cycle-consistent adversarial training with a masked filling-in-frames
auxiliary task, all-ones-mask inference, and an objective-evaluation
harness, all runnable at desk scale on synthetic corpora.
"""

__version__ = "0.1.0"
