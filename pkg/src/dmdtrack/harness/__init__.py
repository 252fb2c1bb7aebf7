"""Command-line harness, presets and artifact I/O."""
