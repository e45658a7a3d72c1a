use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One transposed-convolution upsampling block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrSpec {
    pub scale: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_channels: usize,
}

impl SrSpec {
    /// 2x block: k=4, s=2, p=1.
    pub fn sr1(out_channels: usize) -> Self {
        Self {
            scale: 2,
            kernel: 4,
            stride: 2,
            padding: 1,
            out_channels,
        }
    }

    /// 3x block: k=3, s=3, p=0.
    pub fn sr2(out_channels: usize) -> Self {
        Self {
            scale: 3,
            kernel: 3,
            stride: 3,
            padding: 0,
            out_channels,
        }
    }

    pub fn for_scale(scale: usize, out_channels: usize) -> Result<Self> {
        match scale {
            2 => Ok(Self::sr1(out_channels)),
            3 => Ok(Self::sr2(out_channels)),
            s => Err(Error::Config(format!("unsupported SR scale {s}; expected 2 or 3"))),
        }
    }

    /// `(H-1)*stride - 2*padding + kernel == scale*H` for every H needs
    /// `kernel - 2*padding == stride == scale`.
    pub fn validate(&self) -> Result<()> {
        let exact = self.kernel >= 2 * self.padding
            && self.kernel - 2 * self.padding == self.stride
            && self.stride == self.scale;
        if !exact || !(2..=3).contains(&self.scale) || self.out_channels == 0 {
            return Err(Error::Config(format!("invalid SR block {self:?}")));
        }
        Ok(())
    }
}

/// Ray sampling and positional-encoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayConfig {
    /// Points sampled along each ray.
    pub points: usize,
    /// Frequency octaves per coordinate.
    pub frequencies: usize,
    pub t_near: f64,
    pub t_far: f64,
}

impl RayConfig {
    /// `3 * K * (2L + 1)`.
    pub fn channels(&self) -> usize {
        3 * self.points * (2 * self.frequencies + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Config("ray needs at least one sample point".into()));
        }
        if !(self.t_near < self.t_far) {
            return Err(Error::Config(format!(
                "t_near ({}) must be below t_far ({})",
                self.t_near, self.t_far
            )));
        }
        Ok(())
    }
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            points: 4,
            frequencies: 6,
            t_near: 2.0,
            t_far: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Residual blocks in the trunk; each holds two 1x1 convolutions.
    pub d_blocks: usize,
    pub width: usize,
    pub sr_blocks: Vec<SrSpec>,
    pub ray: RayConfig,
    /// Ray grid `[height, width]` fed to the network.
    pub input_grid: [usize; 2],
    /// Start batch-norm scales at 0.5 instead of 1 so an L1 pull begins mid-range.
    #[serde(default)]
    pub sparsity_init: bool,
}

/// SR tower widths halve from the trunk width, never below 16.
pub fn sr_channel_schedule(width: usize, blocks: usize) -> Vec<usize> {
    (0..blocks).map(|i| (width >> (i + 1)).max(16)).collect()
}

impl ModelConfig {
    pub fn with_scales(d_blocks: usize, width: usize, scales: &[usize], input_grid: [usize; 2]) -> Result<Self> {
        let sr_blocks = sr_channel_schedule(width, scales.len())
            .into_iter()
            .zip(scales)
            .map(|(c, &s)| SrSpec::for_scale(s, c))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            d_blocks,
            width,
            sr_blocks,
            ray: RayConfig::default(),
            input_grid,
            sparsity_init: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale "D8-SR2": 16x16 ray grid upsampled to 64x64.
    pub fn desk() -> Self {
        let mut cfg = Self::with_scales(8, 32, &[2, 2], [16, 16]).expect("desk config is valid");
        cfg.sparsity_init = true;
        cfg
    }

    /// 60 convolution layers in total (head, 26 blocks of two, three SR
    /// pairs, tail) at width 256, 100x100 -> 800x800.
    pub fn d60_sr3() -> Self {
        Self::with_scales(26, 256, &[2, 2, 2], [100, 100]).expect("D60-SR3 config is valid")
    }

    /// Forward-facing variant: 84x63 grid (height 63) upsampled 12x.
    pub fn d60_sr3_forward_facing() -> Self {
        Self::with_scales(26, 256, &[2, 2, 3], [63, 84]).expect("D60-SR3 config is valid")
    }

    pub fn upsampling(&self) -> usize {
        self.sr_blocks.iter().map(|s| s.scale).product()
    }

    /// Render resolution `[height, width]`.
    pub fn output_size(&self) -> [usize; 2] {
        let s = self.upsampling();
        [self.input_grid[0] * s, self.input_grid[1] * s]
    }

    pub fn input_channels(&self) -> usize {
        self.ray.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_blocks < 1 {
            return Err(Error::Config("need at least one residual block".into()));
        }
        if self.width < 8 {
            return Err(Error::Config(format!("trunk width {} below 8", self.width)));
        }
        if self.input_grid.iter().any(|&d| d == 0) {
            return Err(Error::Config("input grid has a zero extent".into()));
        }
        for sr in &self.sr_blocks {
            sr.validate()?;
        }
        self.ray.validate()
    }
}
