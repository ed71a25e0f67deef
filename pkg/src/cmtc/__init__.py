"""Cross-modality and temporal collaboration network for event-based video ReID."""
