"""
Stereo 6D object pose toolkit: synthetic stereo datasets with dense ground-truth
features, mono and stereo-fused pose solvers, and ADD(-S) evaluation.
"""
