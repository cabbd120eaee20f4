"""Proprioceptive state estimation for quadrupeds: a contact-aided invariant
EKF fused with a recurrent measurement network."""

__version__ = "0.1.0"
