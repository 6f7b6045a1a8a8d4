"""The RLF Spotter word spotting package."""
