# Test fixtures package