"""BCE objective, AdamW, warm-up cosine schedule and the training loop."""
