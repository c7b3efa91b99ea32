use std::fmt;
use std::str::FromStr;

use super::params::{Segment, SegmentKind};
use super::NnError;

/// Per-sample activation shape: (channels, height, width).
///
/// Flat feature vectors are represented as `(1, 1, dim)`; dense layers
/// produce `(units, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn flat(dim: usize) -> Self {
        Self::new(1, 1, dim)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    /// Valid-padding, stride-1 convolution.
    Conv2d { filters: usize, kernel_h: usize, kernel_w: usize },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.
    MaxPool { pool_h: usize, pool_w: usize },
    Dense { units: usize },
    Relu,
    /// `rate` is the probability of dropping a unit.
    Dropout { rate: f64 },
    /// Affine map to `classes` logits followed by softmax. Must be last.
    SoftmaxOutput { classes: usize },
}

impl LayerSpec {
    fn output_shape(&self, input: Shape3) -> Result<Shape3, String> {
        match *self {
            LayerSpec::Conv2d { filters, kernel_h, kernel_w } => {
                if filters == 0 || kernel_h == 0 || kernel_w == 0 {
                    return Err("convolution needs positive filters and kernel size".into());
                }
                if kernel_h > input.height || kernel_w > input.width {
                    return Err(format!("{kernel_h}x{kernel_w} kernel does not fit a {input} input"));
                }
                Ok(Shape3::new(filters, input.height - kernel_h + 1, input.width - kernel_w + 1))
            }
            LayerSpec::MaxPool { pool_h, pool_w } => {
                if pool_h == 0 || pool_w == 0 {
                    return Err("pool size must be positive".into());
                }
                if pool_h > input.height || pool_w > input.width {
                    return Err(format!("{pool_h}x{pool_w} pool does not fit a {input} input"));
                }
                Ok(Shape3::new(input.channels, input.height / pool_h, input.width / pool_w))
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err("dense layer needs at least one unit".into());
                }
                Ok(Shape3::new(units, 1, 1))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::SoftmaxOutput { classes } => {
                if classes < 2 {
                    return Err("softmax output needs at least two classes".into());
                }
                Ok(Shape3::new(classes, 1, 1))
            }
        }
    }

    /// (weight shape, bias length) for layers that own parameters.
    fn param_shapes(&self, input: Shape3) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv2d { filters, kernel_h, kernel_w } => {
                Some((vec![filters, input.channels, kernel_h, kernel_w], filters))
            }
            LayerSpec::Dense { units } => Some((vec![units, input.len()], units)),
            LayerSpec::SoftmaxOutput { classes } => Some((vec![classes, input.len()], classes)),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d { filters, kernel_h, kernel_w } => {
                write!(f, "conv={filters}@{kernel_h}x{kernel_w}")
            }
            LayerSpec::MaxPool { pool_h, pool_w } => write!(f, "maxpool={pool_h}x{pool_w}"),
            LayerSpec::Dense { units } => write!(f, "dense={units}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Dropout { rate } => write!(f, "dropout={rate}"),
            LayerSpec::SoftmaxOutput { classes } => write!(f, "softmax={classes}"),
        }
    }
}

/// A validated layer stack together with its input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    input: Shape3,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Shape3>,
}

impl ArchitectureSpec {
    pub fn new(input: Shape3, layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        if input.is_empty() {
            return Err(NnError::Architecture(format!("input shape {input} is empty")));
        }
        match layers.last() {
            Some(LayerSpec::SoftmaxOutput { .. }) => {}
            _ => return Err(NnError::Architecture("last layer must be a softmax output".into())),
        }
        let n_softmax = layers.iter().filter(|l| matches!(l, LayerSpec::SoftmaxOutput { .. })).count();
        if n_softmax != 1 {
            return Err(NnError::Architecture("softmax output may only appear as the last layer".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|e| NnError::Architecture(format!("layer {i} ({layer}): {e}")))?;
            shapes.push(next);
        }
        Ok(Self { input, layers, shapes })
    }

    /// The three-layer convolutional reference model: 32 3x3 filters, 2x2 max
    /// pooling, ReLU, dropout, a 128-unit dense layer with ReLU and dropout,
    /// then a softmax output.
    pub fn reference_cnn(input: Shape3, classes: usize) -> Result<Self, NnError> {
        Self::new(
            input,
            vec![
                LayerSpec::Conv2d { filters: 32, kernel_h: 3, kernel_w: 3 },
                LayerSpec::MaxPool { pool_h: 2, pool_w: 2 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::Dense { units: 128 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::SoftmaxOutput { classes },
            ],
        )
    }

    /// Single hidden layer of 256 units with dropout.
    pub fn wide_mlp(input: Shape3, classes: usize) -> Result<Self, NnError> {
        Self::new(
            input,
            vec![
                LayerSpec::Dense { units: 256 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::SoftmaxOutput { classes },
            ],
        )
    }

    /// Two hidden layers of 128 units, no dropout.
    pub fn deep_mlp(input: Shape3, classes: usize) -> Result<Self, NnError> {
        Self::new(
            input,
            vec![
                LayerSpec::Dense { units: 128 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 128 },
                LayerSpec::Relu,
                LayerSpec::SoftmaxOutput { classes },
            ],
        )
    }

    /// Default three-model cohort: reference CNN, wide MLP, deep MLP.
    pub fn default_cohort(input: Shape3, classes: usize) -> Result<Vec<Self>, NnError> {
        Ok(vec![
            Self::reference_cnn(input, classes)?,
            Self::wide_mlp(input, classes)?,
            Self::deep_mlp(input, classes)?,
        ])
    }

    /// Same stack with every dropout layer set to `rate`.
    pub fn with_dropout(&self, rate: f64) -> Result<Self, NnError> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dropout { .. } => LayerSpec::Dropout { rate },
                other => *other,
            })
            .collect();
        Self::new(self.input, layers)
    }

    pub fn input(&self) -> Shape3 {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of layer `i`, or the network output shape for `i == layers().len()`.
    pub fn shape_at(&self, i: usize) -> Shape3 {
        self.shapes[i]
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) => *classes,
            _ => unreachable!("validated in constructor"),
        }
    }

    /// Parameter segments in storage order: for each parametrized layer,
    /// its weights then its biases.
    pub fn layout(&self) -> Vec<Segment> {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w_shape, b_len)) = layer.param_shapes(self.shapes[i]) {
                let w_len = w_shape.iter().product();
                segments.push(Segment { layer: i, kind: SegmentKind::Weights, offset, len: w_len, shape: w_shape });
                offset += w_len;
                segments.push(Segment { layer: i, kind: SegmentKind::Bias, offset, len: b_len, shape: vec![b_len] });
                offset += b_len;
            }
        }
        segments
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|s| s.len).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { rate } if *rate > 0.0))
    }
}

/// Text descriptor, e.g. `input=1x28x28;dense=128;relu;softmax=10`.
impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input={}", self.input)?;
        for layer in &self.layers {
            write!(f, ";{layer}")?;
        }
        Ok(())
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    Ok((parse_usize(a)?, parse_usize(b)?))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
}

fn parse_layer<'a>(token: &'a str) -> Result<LayerSpec, String> {
    let (name, arg) = match token.split_once('=') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (token.trim(), None),
    };
    let need = |arg: Option<&'a str>| arg.ok_or_else(|| format!("`{name}` needs an argument"));
    match name {
        "conv" => {
            let arg = need(arg)?;
            let (filters, kernel) = arg.split_once('@').ok_or_else(|| format!("expected FILTERS@HxW, got `{arg}`"))?;
            let (kernel_h, kernel_w) = parse_pair(kernel)?;
            Ok(LayerSpec::Conv2d { filters: parse_usize(filters)?, kernel_h, kernel_w })
        }
        "maxpool" => {
            let (pool_h, pool_w) = parse_pair(need(arg)?)?;
            Ok(LayerSpec::MaxPool { pool_h, pool_w })
        }
        "dense" => Ok(LayerSpec::Dense { units: parse_usize(need(arg)?)? }),
        "relu" => Ok(LayerSpec::Relu),
        "dropout" => {
            let arg = need(arg)?;
            let rate = arg.parse::<f64>().map_err(|_| format!("bad dropout rate `{arg}`"))?;
            Ok(LayerSpec::Dropout { rate })
        }
        "softmax" => Ok(LayerSpec::SoftmaxOutput { classes: parse_usize(need(arg)?)? }),
        other => Err(format!("unknown layer `{other}`")),
    }
}

impl FromStr for ArchitectureSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split(';').map(str::trim).filter(|t| !t.is_empty());
        let input = tokens
            .next()
            .and_then(|t| t.strip_prefix("input="))
            .ok_or_else(|| NnError::Architecture("descriptor must start with `input=CxHxW`".into()))?;
        let dims: Vec<&str> = input.split('x').collect();
        let input = match dims.as_slice() {
            [c, h, w] => {
                let p = |v: &str| parse_usize(v).map_err(NnError::Architecture);
                Shape3::new(p(c)?, p(h)?, p(w)?)
            }
            _ => return Err(NnError::Architecture(format!("bad input shape `{input}`"))),
        };
        let layers = tokens.map(parse_layer).collect::<Result<Vec<_>, _>>().map_err(NnError::Architecture)?;
        Self::new(input, layers)
    }
}
