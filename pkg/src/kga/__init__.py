"""Knowledge-gap-alignment machine unlearning at desk scale."""
