use super::{batch_norm, conv2d, global_max_pool, linear, max_pool, relu, Architecture, Tensor, WeightStore};
use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image};
use crate::isp::{apply_pipeline, Hyper, IspParams};

/// Smallest side that survives five `3/2` pooling stages.
pub const ENCODER_MIN_SIDE: usize = 63;

pub(crate) fn image_to_tensor(img: &Image) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("image samples are finite")
}

#[inline]
fn sigmoid(v: f32) -> f64 {
    1.0 / (1.0 + (-f64::from(v)).exp())
}

/// Hyperparameter encoder: five conv(3x3) + ReLU + maxpool(3, 2) stages with
/// 8..128 channels, global max pool, then a 128 -> 6 linear head squashed by
/// a sigmoid into each parameter's range.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    store: WeightStore,
}

impl EncoderNet {
    pub fn new(store: &WeightStore) -> Result<Self> {
        let store = match store.arch() {
            Architecture::Encoder => store.clone(),
            Architecture::Fusion => store.subset(Architecture::Encoder)?,
            Architecture::Detail => {
                return Err(Error::Weights("detail weights given where encoder weights are required".into()))
            }
        };
        Ok(Self { store })
    }

    /// The six raw head outputs before squashing.
    pub fn raw_outputs(&self, img: &Image) -> Result<[f32; 6]> {
        if img.height() < ENCODER_MIN_SIDE || img.width() < ENCODER_MIN_SIDE {
            return Err(Error::Undersized(format!(
                "encoder needs at least {ENCODER_MIN_SIDE}x{ENCODER_MIN_SIDE}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let mut x = image_to_tensor(img);
        for i in 1..=5 {
            x = conv2d(
                &x,
                self.store.get(&format!("enc.conv{i}.weight"))?,
                self.store.get(&format!("enc.conv{i}.bias"))?,
            )?;
            relu(&mut x);
            x = max_pool(&x, 3, 2)?;
        }
        let pooled = global_max_pool(&x)?;
        let out = linear(&pooled, self.store.get("enc.fc.weight")?, self.store.get("enc.fc.bias")?)?;
        Ok(out.data().try_into().expect("head has six outputs"))
    }

    pub fn forward(&self, img: &Image) -> Result<IspParams> {
        let raw = self.raw_outputs(img)?;
        let mut v = [0.0; 6];
        for (i, h) in Hyper::ALL.iter().enumerate() {
            let (lo, hi) = h.range();
            v[i] = lo + sigmoid(raw[i]) * (hi - lo);
        }
        Ok(IspParams::project(v))
    }
}

pub fn encoder_forward(img: &Image, weights: &WeightStore) -> Result<IspParams> {
    EncoderNet::new(weights)?.forward(img)
}

/// Detail network: conv 3->32, three residual blocks at 32 channels, conv
/// 32->3 with tanh. Every conv but the last is followed by BN + ReLU; a
/// block adds its input to the output of its second BN + ReLU.
#[derive(Debug, Clone)]
pub struct DetailNet {
    store: WeightStore,
}

impl DetailNet {
    pub fn new(store: &WeightStore) -> Result<Self> {
        let store = match store.arch() {
            Architecture::Detail => store.clone(),
            Architecture::Fusion => store.subset(Architecture::Detail)?,
            Architecture::Encoder => {
                return Err(Error::Weights("encoder weights given where detail weights are required".into()))
            }
        };
        Ok(Self { store })
    }

    fn conv_bn_relu(&self, x: &Tensor, conv: &str, bn: &str) -> Result<Tensor> {
        let s = &self.store;
        let mut y = conv2d(x, s.get(&format!("{conv}.weight"))?, s.get(&format!("{conv}.bias"))?)?;
        batch_norm(
            &mut y,
            s.get(&format!("{bn}.gamma"))?.data(),
            s.get(&format!("{bn}.beta"))?.data(),
            s.get(&format!("{bn}.mean"))?.data(),
            s.get(&format!("{bn}.var"))?.data(),
        )?;
        relu(&mut y);
        Ok(y)
    }

    /// Residual raster, interleaved `H x W x 3`, every value in `[-1, 1]`.
    pub fn forward(&self, img: &Image) -> Result<Vec<f64>> {
        let x = image_to_tensor(img);
        let mut h = self.conv_bn_relu(&x, "det.conv_in", "det.bn_in")?;
        for b in 1..=3 {
            let y = self.conv_bn_relu(&h, &format!("det.block{b}.conv1"), &format!("det.block{b}.bn1"))?;
            let y = self.conv_bn_relu(&y, &format!("det.block{b}.conv2"), &format!("det.block{b}.bn2"))?;
            for (a, v) in h.data_mut().iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        let out = conv2d(&h, self.store.get("det.conv_out.weight")?, self.store.get("det.conv_out.bias")?)?;
        let plane = img.pixel_count();
        let mut res = vec![0.0; plane * 3];
        for (i, px) in res.chunks_exact_mut(3).enumerate() {
            for c in 0..3 {
                px[c] = f64::from(out.data()[c * plane + i].tanh());
            }
        }
        Ok(res)
    }
}

/// Which image the detail network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetailInput {
    /// The raw input image (default).
    #[default]
    Original,
    /// The output of the filter pipeline.
    Enhanced,
}

/// Result of a full enhancement pass.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub params: IspParams,
    pub image: Image,
}

/// Encoder + filter pipeline + detail residual.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub encoder: EncoderNet,
    pub detail: DetailNet,
    pub detail_input: DetailInput,
}

impl FusionModel {
    pub fn new(encoder: &WeightStore, detail: &WeightStore) -> Result<Self> {
        Ok(Self {
            encoder: EncoderNet::new(encoder)?,
            detail: DetailNet::new(detail)?,
            detail_input: DetailInput::Original,
        })
    }

    pub fn from_fusion(store: &WeightStore) -> Result<Self> {
        Self::new(store, store)
    }

    pub fn enhance(&self, img: &Image) -> Result<Enhanced> {
        let params = self.encoder.forward(img)?;
        let filtered = apply_pipeline(img, &params)?;
        let residual = match self.detail_input {
            DetailInput::Original => self.detail.forward(img)?,
            DetailInput::Enhanced => self.detail.forward(&filtered)?,
        };
        let data = filtered
            .data()
            .iter()
            .zip(&residual)
            .map(|(v, r)| clamp_unit(v + r))
            .collect();
        Ok(Enhanced {
            params,
            image: Image::from_clamped(img.height(), img.width(), data),
        })
    }
}

/// `clamp(apply_pipeline(img, encoder(img)) + detail(img), 0, 1)`.
pub fn enhance(img: &Image, encoder: &WeightStore, detail: &WeightStore) -> Result<Image> {
    enhance_with(img, encoder, detail, DetailInput::Original)
}

pub fn enhance_with(img: &Image, encoder: &WeightStore, detail: &WeightStore, wiring: DetailInput) -> Result<Image> {
    let mut model = FusionModel::new(encoder, detail)?;
    model.detail_input = wiring;
    Ok(model.enhance(img)?.image)
}
