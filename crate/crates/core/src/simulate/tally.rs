//! Detection tallies and their CSV form.
//!
//! CSV schema: header `alice_basis,alice_bit,bob_basis,outcome,count`, one row
//! per populated cell. A leading `slice` column is accepted for time-sliced
//! data (one tally per slice).

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optics::Basis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Bit0,
    Bit1,
    Inconclusive,
    NoClick,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Bit0, Outcome::Bit1, Outcome::Inconclusive, Outcome::NoClick];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn bit(bit: bool) -> Outcome {
        if bit {
            Outcome::Bit1
        } else {
            Outcome::Bit0
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Bit0 => "bit0",
            Outcome::Bit1 => "bit1",
            Outcome::Inconclusive => "inconclusive",
            Outcome::NoClick => "no-click",
        })
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bit0" | "0" => Ok(Outcome::Bit0),
            "bit1" | "1" => Ok(Outcome::Bit1),
            "inconclusive" => Ok(Outcome::Inconclusive),
            "no-click" | "noclick" => Ok(Outcome::NoClick),
            other => Err(Error::Data(format!("unknown outcome {other:?}"))),
        }
    }
}

const CELLS: usize = 3 * 2 * 3 * 4;

#[inline]
fn cell(alice_basis: Basis, alice_bit: bool, bob_basis: Basis, outcome: Outcome) -> usize {
    ((alice_basis.index() * 2 + usize::from(alice_bit)) * 3 + bob_basis.index()) * 4 + outcome.index()
}

/// Event counts indexed by (alice basis, alice bit, bob basis, outcome).
#[derive(Clone, PartialEq, Eq)]
pub struct TallySet {
    counts: [u64; CELLS],
    n_pulses_total: u64,
}

impl Default for TallySet {
    fn default() -> Self {
        TallySet { counts: [0; CELLS], n_pulses_total: 0 }
    }
}

impl fmt::Debug for TallySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TallySet")
            .field("n_pulses_total", &self.n_pulses_total)
            .field("populated", &self.iter().count())
            .finish()
    }
}

impl TallySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_pulses_total(&self) -> u64 {
        self.n_pulses_total
    }

    pub fn get(&self, alice_basis: Basis, alice_bit: bool, bob_basis: Basis, outcome: Outcome) -> u64 {
        self.counts[cell(alice_basis, alice_bit, bob_basis, outcome)]
    }

    /// Records `count` pulses with the given preparation and outcome.
    #[inline]
    pub fn record(&mut self, alice_basis: Basis, alice_bit: bool, bob_basis: Basis, outcome: Outcome, count: u64) {
        self.counts[cell(alice_basis, alice_bit, bob_basis, outcome)] += count;
        self.n_pulses_total += count;
    }

    /// Pulses sent with this preparation and measured in `bob_basis`.
    pub fn prepared(&self, alice_basis: Basis, alice_bit: bool, bob_basis: Basis) -> u64 {
        Outcome::ALL.iter().map(|&o| self.get(alice_basis, alice_bit, bob_basis, o)).sum()
    }

    /// Pulses where Alice used `alice_basis` and Bob measured in `bob_basis`.
    pub fn pulses_in(&self, alice_basis: Basis, bob_basis: Basis) -> u64 {
        self.prepared(alice_basis, false, bob_basis) + self.prepared(alice_basis, true, bob_basis)
    }

    /// Populated cells in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = (Basis, bool, Basis, Outcome, u64)> + '_ {
        Basis::ALL.into_iter().flat_map(move |a| {
            [false, true].into_iter().flat_map(move |bit| {
                Basis::ALL.into_iter().flat_map(move |b| {
                    Outcome::ALL.into_iter().filter_map(move |o| {
                        let c = self.get(a, bit, b, o);
                        (c > 0).then_some((a, bit, b, o, c))
                    })
                })
            })
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alice_basis", "alice_bit", "bob_basis", "outcome", "count"])?;
        for (a, bit, b, o, c) in self.iter() {
            w.write_record([
                a.to_string(),
                u8::from(bit).to_string(),
                b.to_string(),
                o.to_string(),
                c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<TallySet> {
        let mut slices = read_sliced_csv(input)?;
        match slices.len() {
            0 => Ok(TallySet::new()),
            1 => Ok(slices.pop().unwrap()),
            _ => Ok(slices.into_iter().sum()),
        }
    }
}

impl AddAssign<&TallySet> for TallySet {
    fn add_assign(&mut self, rhs: &TallySet) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts.iter()) {
            *a += b;
        }
        self.n_pulses_total += rhs.n_pulses_total;
    }
}

impl Add for TallySet {
    type Output = TallySet;

    fn add(mut self, rhs: TallySet) -> TallySet {
        self += &rhs;
        self
    }
}

impl std::iter::Sum for TallySet {
    fn sum<I: Iterator<Item = TallySet>>(iter: I) -> TallySet {
        iter.fold(TallySet::new(), Add::add)
    }
}

/// Writes one tally per slice with a leading `slice` column.
pub fn write_sliced_csv<W: Write>(slices: &[TallySet], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slice", "alice_basis", "alice_bit", "bob_basis", "outcome", "count"])?;
    for (k, t) in slices.iter().enumerate() {
        for (a, bit, b, o, c) in t.iter() {
            w.write_record([
                k.to_string(),
                a.to_string(),
                u8::from(bit).to_string(),
                b.to_string(),
                o.to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a tally CSV. Without a `slice` column the result is a single tally.
pub fn read_sliced_csv<R: Read>(input: R) -> Result<Vec<TallySet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("tally CSV is missing column {name:?}")))
    };
    let (ia, ibit, ib, io, ic) = (
        col("alice_basis")?,
        col("alice_bit")?,
        col("bob_basis")?,
        col("outcome")?,
        col("count")?,
    );
    let islice = headers.iter().position(|h| h == "slice");

    let mut slices: Vec<TallySet> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ctx = |e: Error| Error::Data(format!("tally CSV row {}: {e}", line + 2));
        let alice_basis: Basis = field(ia).parse().map_err(ctx)?;
        let bob_basis: Basis = field(ib).parse().map_err(ctx)?;
        let alice_bit = match field(ibit) {
            "0" => false,
            "1" => true,
            other => return Err(Error::Data(format!("tally CSV row {}: bad bit {other:?}", line + 2))),
        };
        let outcome: Outcome = field(io).parse().map_err(ctx)?;
        let count: u64 = field(ic)
            .parse()
            .map_err(|_| Error::Data(format!("tally CSV row {}: bad count {:?}", line + 2, field(ic))))?;
        let slice = match islice {
            Some(i) => field(i)
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("tally CSV row {}: bad slice {:?}", line + 2, field(i))))?,
            None => 0,
        };
        if slices.len() <= slice {
            slices.resize_with(slice + 1, TallySet::new);
        }
        slices[slice].record(alice_basis, alice_bit, bob_basis, outcome, count);
    }
    Ok(slices)
}
