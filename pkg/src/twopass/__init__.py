"""Two-pass deliberation sequence transduction."""
