"""Desk-scale segmentation harness for exercising the upsampling stages
end to end: synthetic shape data, a small encoder-decoder net, overlap
metrics, and a deterministic training loop."""
