use rand::Rng;

use crate::error::Result;
use crate::nn::attention::{AttentionCache, MultiHeadAttention};
use crate::nn::dropout::{mask_backward, DropoutSpec};
use crate::nn::ffn::{FeedForwardNet, FfnCache};
use crate::nn::norm::{LayerNorm, LayerNormCache};
use crate::nn::params::{join, Parameterized};
use crate::nn::tensor::SampleFrameTensor;
use crate::nn::NnRng;
use crate::real::Real;

/// Pre-norm self-attention block:
/// `u = x + drop(MHA(LN₁(x)))`, `y = u + drop(FFN(LN₂(u)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock<T> {
    pub norm_attn: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm_ffn: LayerNorm<T>,
    pub ffn: FeedForwardNet<T>,
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    attn_mask: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    ffn: FfnCache<T>,
    ffn_mask: Option<Vec<T>>,
}

impl<T: Real> DecoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        width: usize,
        heads: usize,
        d_ff: usize,
        attn_dropout: f64,
        ffn_dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(width),
            attn: MultiHeadAttention::new(width, heads, attn_dropout, rng)?,
            norm_ffn: LayerNorm::new(width),
            ffn: FeedForwardNet::new(width, d_ff, rng),
            attn_dropout,
            ffn_dropout,
        })
    }

    pub fn forward_cached(
        &self,
        x: &SampleFrameTensor<T>,
        mut rng: Option<&mut NnRng>,
    ) -> (SampleFrameTensor<T>, BlockCache<T>) {
        let (a_in, ln1) = self.norm_attn.forward(x);
        let (mut a, attn) = self.attn.forward_cached(&a_in, rng.as_deref_mut());
        let attn_mask = DropoutSpec::new(self.attn_dropout).apply_opt(a.data_mut(), rng.as_deref_mut());
        let mut u = x.clone();
        u.add_assign(&a);
        let (f_in, ln2) = self.norm_ffn.forward(&u);
        let (mut f, ffn) = self.ffn.forward_cached(&f_in);
        let ffn_mask = DropoutSpec::new(self.ffn_dropout).apply_opt(f.data_mut(), rng.as_deref_mut());
        u.add_assign(&f);
        (
            u,
            BlockCache {
                ln1,
                attn,
                attn_mask,
                ln2,
                ffn,
                ffn_mask,
            },
        )
    }

    pub fn backward(&self, c: &BlockCache<T>, dy: &SampleFrameTensor<T>, grad: &mut Self) -> SampleFrameTensor<T> {
        let mut df = dy.clone();
        mask_backward(&c.ffn_mask, df.data_mut());
        let df_in = self.ffn.backward(&c.ffn, &df, &mut grad.ffn);
        let mut du = self.norm_ffn.backward(&c.ln2, &df_in, &mut grad.norm_ffn);
        du.add_assign(dy);
        let mut da = du.clone();
        mask_backward(&c.attn_mask, da.data_mut());
        let da_in = self.attn.backward(&c.attn, &da, &mut grad.attn);
        let mut dx = self.norm_attn.backward(&c.ln1, &da_in, &mut grad.norm_attn);
        dx.add_assign(&du);
        dx
    }
}

impl<T: Real> Parameterized<T> for DecoderBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &SampleFrameTensor<T>)) {
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut SampleFrameTensor<T>)) {
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}
