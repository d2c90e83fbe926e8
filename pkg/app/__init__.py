"""Black-box differential-privacy auditing toolkit."""
