//! Fixtures shared by the criterion benches. Inputs match the ones the
//! in-crate timing harness uses, so both report on identical work.

use seqrec_core::bench::bench_timestamps;
use seqrec_core::bias::{
    bucketed_rab_temporal, frab_matrix, BiasFunctionSpec, BiasKind, BiasMatrix, BucketTable,
    DEFAULT_MAX_BUCKET, DEFAULT_TIME_SCALE,
};
use seqrec_core::data::seeded_rng;
use seqrec_core::mixer::MixerConfig;
use seqrec_core::model::{block_forward, register_block_params, ModelConfig};
use seqrec_core::numerics::{Gradients, ParamStore, Real, Tape, Tensor};
use seqrec_core::Result;

pub use seqrec_core::bench::block_modes;

/// Sequence lengths swept by both benches.
pub const SWEEP_N: [usize; 3] = [128, 512, 2048];

/// Functional and bucketed temporal bias inputs on shared timestamps.
pub struct BiasFixture {
    pub timestamps: Vec<i64>,
    pub spec: BiasFunctionSpec,
    pub table: BucketTable,
}

impl BiasFixture {
    pub fn new(n: usize) -> Result<Self> {
        let mut rng = seeded_rng(0);
        let spec = BiasFunctionSpec::init(BiasKind::Pow, true, DEFAULT_MAX_BUCKET, &mut rng);
        let beta = (0..DEFAULT_MAX_BUCKET)
            .map(|_| rand::Rng::random::<Real>(&mut rng))
            .collect();
        Ok(BiasFixture {
            timestamps: bench_timestamps(n, n as u64),
            spec,
            table: BucketTable::new(beta, DEFAULT_TIME_SCALE)?,
        })
    }

    pub fn frab(&self) -> Result<BiasMatrix> {
        frab_matrix(&self.timestamps, &self.spec, DEFAULT_TIME_SCALE)
    }

    pub fn bucketed(&self) -> Result<BiasMatrix> {
        bucketed_rab_temporal(&self.timestamps, &self.table)
    }
}

/// One block's parameters and an `n×d` input.
pub struct BlockFixture {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub x: Tensor,
    pub timestamps: Vec<i64>,
}

impl BlockFixture {
    pub fn new(n: usize, d: usize, mixer: MixerConfig) -> Result<Self> {
        let config = ModelConfig {
            item_count: 1,
            n,
            d,
            d_ffn: d,
            layers: 1,
            mixer,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        register_block_params(&mut store, 0, &config, &mut seeded_rng(1))?;
        let mut rng = seeded_rng((n * 31 + d) as u64);
        let x = Tensor::from_fn(n, d, |_, _| rand::Rng::random::<Real>(&mut rng) - 0.5);
        Ok(BlockFixture {
            config,
            store,
            x,
            timestamps: bench_timestamps(n, n as u64),
        })
    }

    /// Forward, `sum` of the output, and backward.
    pub fn step(&self) -> Result<Gradients> {
        let mut tape = Tape::new();
        let xv = tape.constant(self.x.clone())?;
        let y = block_forward(
            &mut tape,
            &self.store,
            0,
            &self.config,
            xv,
            &self.timestamps,
        )?;
        let loss = tape.sum_all(y)?;
        tape.backward(loss)
    }
}
