//! Lead-time calendars and local reference prices.
//!
//! Options are numbered from 1. Option `i` falls on the start day advanced by
//! `i - 1` days. A weekday's reference price is the lowest offered price among
//! itself and its neighbouring offered weekdays (weekends do not break the
//! weekday sequence, so Friday and the following Monday are neighbours). A
//! weekend option's reference price is the lowest offered weekend price.

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DayClass {
    Weekday,
    Weekend,
}

impl DayClass {
    pub fn of(day: Weekday) -> Self {
        match day {
            Weekday::Sat | Weekday::Sun => DayClass::Weekend,
            _ => DayClass::Weekday,
        }
    }
}

/// The lead-time options offered on one quote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadTimeCalendar {
    start: Weekday,
    available: Vec<bool>,
}

impl LeadTimeCalendar {
    /// Calendar with every option offered.
    pub fn new(start: Weekday, num_options: usize) -> Result<Self> {
        Self::with_availability(start, vec![true; num_options])
    }

    pub fn with_availability(start: Weekday, available: Vec<bool>) -> Result<Self> {
        if available.is_empty() {
            return Err(Error::Empty("calendar has no options"));
        }
        if !available.iter().any(|&a| a) {
            return Err(Error::invalid("calendar must offer at least one option"));
        }
        Ok(Self { start, available })
    }

    pub fn num_options(&self) -> usize {
        self.available.len()
    }

    pub fn start_day(&self) -> Weekday {
        self.start
    }

    pub fn availability(&self) -> &[bool] {
        &self.available
    }

    fn check(&self, option: usize) -> Result<()> {
        if option == 0 || option > self.available.len() {
            return Err(Error::IndexOutOfRange {
                index: option,
                len: self.available.len(),
            });
        }
        Ok(())
    }

    /// Day of week of 1-based `option`.
    pub fn day_of_week(&self, option: usize) -> Result<Weekday> {
        self.check(option)?;
        Ok(self.weekday_at(option - 1))
    }

    pub fn day_class(&self, option: usize) -> Result<DayClass> {
        Ok(DayClass::of(self.day_of_week(option)?))
    }

    pub fn is_available(&self, option: usize) -> Result<bool> {
        self.check(option)?;
        Ok(self.available[option - 1])
    }

    pub(crate) fn weekday_at(&self, zero_based: usize) -> Weekday {
        let offset = (self.start.num_days_from_monday() as usize + zero_based) % 7;
        weekday_from_monday(offset)
    }

    pub(crate) fn class_at(&self, zero_based: usize) -> DayClass {
        DayClass::of(self.weekday_at(zero_based))
    }
}

pub(crate) fn weekday_from_monday(n: usize) -> Weekday {
    match n % 7 {
        0 => Weekday::Mon,
        1 => Weekday::Tue,
        2 => Weekday::Wed,
        3 => Weekday::Thu,
        4 => Weekday::Fri,
        5 => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

/// Local reference price for every option of `prices`.
///
/// Unavailable options take no part in any window; their own entry is set to
/// their own price so that `r <= p` holds everywhere.
pub fn reference_prices<T: Scalar>(prices: &[T], calendar: &LeadTimeCalendar) -> Result<Vec<T>> {
    let n = calendar.num_options();
    if prices.len() != n {
        return Err(Error::LengthMismatch {
            what: "prices",
            expected: n,
            found: prices.len(),
        });
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("prices"));
    }
    if prices.iter().any(|&p| p < T::zero()) {
        return Err(Error::invalid("prices must be nonnegative"));
    }

    let mut reference = prices.to_vec();
    let mut weekdays = Vec::with_capacity(n);
    let mut weekend_min: Option<T> = None;
    for k in 0..n {
        if !calendar.available[k] {
            continue;
        }
        match calendar.class_at(k) {
            DayClass::Weekday => weekdays.push(k),
            DayClass::Weekend => {
                weekend_min = Some(match weekend_min {
                    Some(m) if m <= prices[k] => m,
                    _ => prices[k],
                });
            }
        }
    }

    for (pos, &k) in weekdays.iter().enumerate() {
        let lo = pos.saturating_sub(1);
        let hi = (pos + 1).min(weekdays.len() - 1);
        reference[k] = weekdays[lo..=hi]
            .iter()
            .map(|&j| prices[j])
            .fold(prices[k], |m, p| if p < m { p } else { m });
    }
    if let Some(m) = weekend_min {
        for k in 0..n {
            if calendar.available[k] && calendar.class_at(k) == DayClass::Weekend {
                reference[k] = m;
            }
        }
    }
    Ok(reference)
}
