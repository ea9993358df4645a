"""CDC epiweek arithmetic on ``YYYYWW`` integers."""

from epiweeks import Week

#: Weeks between an issue week and the newest truth value it can see.
REPORTING_DELAY = 2


def to_week(epiweek: int) -> Week:
    year, week = divmod(int(epiweek), 100)
    return Week(year, week)


def from_week(week: Week) -> int:
    return week.year * 100 + week.week


def shift(epiweek: int, n: int) -> int:
    """Move ``epiweek`` by ``n`` weeks, crossing year boundaries correctly."""
    return from_week(to_week(epiweek) + n)


def weeks_between(start: int, stop: int) -> int:
    """Signed number of weeks from ``start`` to ``stop``."""
    return (to_week(stop).startdate() - to_week(start).startdate()).days // 7


def target_epiweek(issue: int, horizon: int) -> int:
    """Epiweek forecast by an ``horizon``-week-ahead forecast issued at ``issue``.

    Data issued at week t runs through t-2, so the 1 week ahead target is
    t-1 and the 2 week ahead target is the current week.
    """
    return shift(issue, horizon - REPORTING_DELAY)
