"""Exception types raised by the qsid library."""


class QsidError(Exception):
    """Base class for all qsid errors."""


class ParseError(QsidError):
    """Input data could not be parsed; message names the row/column."""


class EmptyExamError(QsidError):
    """Preprocessing removed every student."""


class DegenerateExamError(QsidError):
    """A local median IM of zero makes collusion scores undefined."""

    def __init__(self, rank_lo: int, rank_hi: int):
        self.rank_lo = rank_lo
        self.rank_hi = rank_hi
        super().__init__(
            f"degenerate exam: local median IM is 0 for ranks {rank_lo}-{rank_hi}; "
            "identity metrics carry no discriminating signal"
        )


class IneligibleExamError(QsidError):
    """The exam failed an eligibility gate; carries the eligibility record."""

    def __init__(self, eligibility):
        self.eligibility = eligibility
        super().__init__(f"exam rejected: {eligibility.status}")


class CohortSizeError(QsidError):
    """A test-score cohort is too small to fit a correlation model."""


class ConfigError(QsidError):
    """A configuration artifact (threshold table, anchors, ...) is invalid."""


class CalibrationError(QsidError):
    """Threshold calibration could not produce valid cutoffs."""
