"""Signature-Graph Networks."""
