use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ote_core::locality::{CacheConfig, Schedule};
use ote_core::params::{preset, ParamPreset};
use ote_core::prg::PrgKind;
use ote_core::Block;

#[derive(Parser, Debug)]
#[command(name = "ote", version, about = "Correlated OT extension engine, cache and near-memory models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run extension iterations and dump the emitted correlations.
    Gen(GenArgs),
    /// Check a sender dump against a receiver dump.
    Verify(VerifyArgs),
    /// Count PRG calls for each fanout and PRG choice.
    Bench(BenchArgs),
    /// Simulate cache hit rates of an LPN access schedule.
    CacheSim(CacheSimArgs),
    /// Model near-memory latency across rank counts.
    NmpSim(NmpSimArgs),
    /// Reorder an LPN matrix for locality and write the schedule.
    Sort(SortArgs),
    /// Deal base correlation pools to files.
    Dealer(DealerArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Sender,
    Receiver,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrgChoice {
    Stream,
    Fixedkey,
}

impl PrgChoice {
    pub fn kind(self, fanout: usize) -> PrgKind {
        match (self, fanout) {
            (PrgChoice::Stream, _) => PrgKind::STREAM,
            (PrgChoice::Fixedkey, 4) => PrgKind::QuadFixedKey,
            (PrgChoice::Fixedkey, _) => PrgKind::DoubleFixedKey,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleChoice {
    None,
    Swap,
    #[value(name = "swap+lookahead")]
    SwapLookahead,
}

impl From<ScheduleChoice> for Schedule {
    fn from(s: ScheduleChoice) -> Schedule {
        match s {
            ScheduleChoice::None => Schedule::Unsorted,
            ScheduleChoice::Swap => Schedule::Swap,
            ScheduleChoice::SwapLookahead => Schedule::SwapLookahead,
        }
    }
}

pub fn parse_preset(s: &str) -> Result<ParamPreset, String> {
    preset(s).ok_or_else(|| {
        let names = ote_core::params::preset_names().join(", ");
        format!("unknown parameter set `{s}` (expected one of {names})")
    })
}

pub fn parse_fanout(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("fanout must be 2 or 4, got `{s}`")),
    }
}

/// Decimal or `0x` hexadecimal 128-bit seed.
pub fn parse_seed(s: &str) -> Result<Block, String> {
    let v = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u128::from_str_radix(hex, 16),
        None => s.parse::<u128>(),
    };
    v.map(Block).map_err(|e| format!("bad seed `{s}`: {e}"))
}

/// Byte counts such as `4096`, `32K`, `1M`, `2MB`.
pub fn parse_size(s: &str) -> Result<u64, String> {
    let t = s.trim().to_ascii_uppercase();
    let t = t.strip_suffix('B').unwrap_or(&t);
    let (num, mult) = match t.chars().last() {
        Some('K') => (&t[..t.len() - 1], 1u64 << 10),
        Some('M') => (&t[..t.len() - 1], 1 << 20),
        Some('G') => (&t[..t.len() - 1], 1 << 30),
        _ => (t, 1),
    };
    num.parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .ok_or_else(|| format!("bad size `{s}`"))
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Run both roles in this process.
    #[arg(long, conflicts_with_all = ["role", "listen", "connect"])]
    pub loopback: bool,
    #[arg(long, value_enum, required_unless_present = "loopback")]
    pub role: Option<Role>,
    /// Wait for the peer on this address.
    #[arg(long, conflicts_with = "connect")]
    pub listen: Option<String>,
    /// Connect to the peer at this address.
    #[arg(long)]
    pub connect: Option<String>,
    /// Seconds to keep retrying the connection.
    #[arg(long, default_value_t = 10)]
    pub connect_timeout: u64,
    #[arg(long, value_parser = parse_preset, default_value = "toy")]
    pub params: ParamPreset,
    #[arg(long = "m-ary", value_parser = parse_fanout, default_value = "4")]
    pub m_ary: usize,
    #[arg(long, value_enum, default_value_t = PrgChoice::Stream)]
    pub prg: PrgChoice,
    #[arg(long, value_parser = parse_seed, default_value = "1")]
    pub matrix_seed: Block,
    /// Seed of the sender's global offset.
    #[arg(long, value_parser = parse_seed, default_value = "2")]
    pub delta_seed: Block,
    /// Seed shared by both parties to deal the first base pools.
    #[arg(long, value_parser = parse_seed, default_value = "3")]
    pub dealer_seed: Block,
    /// This party's protocol randomness.
    #[arg(long, value_parser = parse_seed, default_value = "4")]
    pub seed: Block,
    /// Base pool file instead of dealing in process.
    #[arg(long, conflicts_with = "loopback")]
    pub pool: Option<PathBuf>,
    /// Locality-sorted matrix file to encode with.
    #[arg(long)]
    pub sorted: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Dump file, or directory for `--loopback`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write JSON stats here instead of stdout.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub sender: PathBuf,
    #[arg(long)]
    pub receiver: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_preset, default_value = "toy")]
    pub params: ParamPreset,
    #[arg(long, value_parser = parse_seed, default_value = "1")]
    pub matrix_seed: Block,
    /// CSV output file; stdout if absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WorkloadArgs {
    #[arg(long, value_parser = parse_preset, conflicts_with_all = ["n", "k", "d"])]
    pub params: Option<ParamPreset>,
    #[arg(long, requires_all = ["k", "d"])]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_parser = parse_seed, default_value = "1")]
    pub matrix_seed: Block,
    /// Simulate only the first N rows.
    #[arg(long)]
    pub rows: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CacheArgs {
    #[arg(long, default_value_t = 64)]
    pub line: u32,
    #[arg(long, default_value_t = 16)]
    pub element: u32,
    /// Set associativity; fully associative if absent.
    #[arg(long)]
    pub ways: Option<u32>,
    #[arg(long, default_value_t = ote_core::locality::DEFAULT_WINDOW)]
    pub window: usize,
}

impl CacheArgs {
    pub fn config(&self, capacity: u64) -> ote_core::Result<CacheConfig> {
        CacheConfig::new(capacity, self.line, self.ways, self.element)
    }
}

#[derive(Args, Debug)]
pub struct CacheSimArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none,swap,swap+lookahead")]
    pub schedule: Vec<ScheduleChoice>,
    /// Comma-separated capacities.
    #[arg(long, value_delimiter = ',', value_parser = parse_size,
          default_value = "32K,64K,128K,256K,512K,1M,2M")]
    pub cache: Vec<u64>,
    #[command(flatten)]
    pub cache_args: CacheArgs,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NmpSimArgs {
    #[arg(long, value_parser = parse_preset, default_value = "p20")]
    pub params: ParamPreset,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub ranks: Vec<usize>,
    #[arg(long, value_parser = parse_size, default_value = "1M")]
    pub cache: u64,
    #[arg(long, value_enum, default_value_t = ScheduleChoice::SwapLookahead)]
    pub schedule: ScheduleChoice,
    #[arg(long = "m-ary", value_parser = parse_fanout, default_value = "4")]
    pub m_ary: usize,
    #[arg(long, value_enum, default_value_t = PrgChoice::Stream)]
    pub prg: PrgChoice,
    #[arg(long, value_parser = parse_seed, default_value = "1")]
    pub matrix_seed: Block,
    #[command(flatten)]
    pub cache_args: CacheArgs,
    #[arg(long, default_value_t = 1200.0)]
    pub memory_clock_mhz: f64,
    #[arg(long, default_value_t = 2)]
    pub t_hit: u64,
    #[arg(long, default_value_t = 16)]
    pub t_rcd: u64,
    #[arg(long, default_value_t = 16)]
    pub t_cl: u64,
    #[arg(long, default_value_t = 4)]
    pub t_bl: u64,
    #[arg(long, default_value_t = 4)]
    pub chacha_cores_per_dimm: u64,
    #[arg(long, default_value_t = 8)]
    pub pipeline_depth: u64,
    #[arg(long, default_value_t = 2)]
    pub ranks_per_dimm: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SortArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[arg(long, value_parser = parse_size, default_value = "1M")]
    pub cache: u64,
    #[command(flatten)]
    pub cache_args: CacheArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DealerArgs {
    /// Correlations to deal; defaults to one iteration's need.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_parser = parse_preset, default_value = "toy")]
    pub params: ParamPreset,
    #[arg(long = "m-ary", value_parser = parse_fanout, default_value = "4")]
    pub m_ary: usize,
    #[arg(long, value_parser = parse_seed, default_value = "2")]
    pub delta_seed: Block,
    #[arg(long, value_parser = parse_seed, default_value = "3")]
    pub dealer_seed: Block,
    #[arg(long)]
    pub sender_out: PathBuf,
    #[arg(long)]
    pub receiver_out: PathBuf,
}
