"""Language-model-guided open-set detection at desk scale.

A toy multimodal causal LM emits a ``<DET>`` token; its last-layer hidden state
steers a DETR-style detector through query selection and the decoder's text
cross-attention.
"""
__version__ = "0.1.0"
