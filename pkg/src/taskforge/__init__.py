"""Crowdsourcing orchestration: define an annotation task once, then run it
end to end — deployment, assignment, quality gates, persistence, review —
with every stage behind a pluggable abstraction and a mock crowd for
offline operation."""

__version__ = "0.1.0"
