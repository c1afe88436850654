use crate::error::Result;
use crate::flops::cost;
use crate::ops;
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

use super::{Act, ConvBnAct, Module};

/// CSP stage: 1×1 expand to two halves of `cout/2`, a chain of residual
/// 3×3 bottlenecks each appending its output, concat, 1×1 project.
///
/// Paths: `{p}.expand`, `{p}.m.{j}.cv1`, `{p}.m.{j}.cv2`, `{p}.project`.
#[derive(Clone, Debug)]
pub struct C2f {
    pub expand: ConvBnAct,
    pub bottlenecks: Vec<(ConvBnAct, ConvBnAct)>,
    pub project: ConvBnAct,
}

impl C2f {
    /// `cout` must be even.
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, cout: usize, depth: usize) -> Result<Self> {
        let h = cout / 2;
        let expand = ConvBnAct::new(src, &format!("{prefix}.expand"), cin, 2 * h, 1, 1, Act::Silu)?;
        let bottlenecks = (0..depth)
            .map(|j| {
                let p = format!("{prefix}.m.{j}");
                Ok((
                    ConvBnAct::new(src, &format!("{p}.cv1"), h, h, 3, 1, Act::Silu)?,
                    ConvBnAct::new(src, &format!("{p}.cv2"), h, h, 3, 1, Act::Silu)?,
                ))
            })
            .collect::<Result<_>>()?;
        let project = ConvBnAct::new(src, &format!("{prefix}.project"), (2 + depth) * h, cout, 1, 1, Act::Silu)?;
        Ok(Self {
            expand,
            bottlenecks,
            project,
        })
    }

    fn hidden(&self) -> usize {
        self.expand.cout() / 2
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.hidden();
        let mut parts = ops::split(&self.expand.forward(x)?, &[h, h], 1)?;
        for (cv1, cv2) in &self.bottlenecks {
            let last = parts.last().expect("two halves");
            let y = ops::add(&cv2.forward(&cv1.forward(last)?)?, last)?;
            parts.push(y);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        self.project.forward(&ops::concat(&refs, 1)?)
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<Vec<usize>> {
        let mut s = self.expand.analyze(a, x)?;
        s[1] = self.hidden();
        for (cv1, cv2) in &self.bottlenecks {
            let mid = cv1.analyze(a, &s)?;
            let y = cv2.analyze(a, &mid)?;
            a.elementwise(&y, cost::BINARY_PER_ELEM);
        }
        s[1] = self.project.cin();
        self.project.analyze(a, &s)
    }
}

impl Module for C2f {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.expand.visit(f);
        for (cv1, cv2) in &self.bottlenecks {
            cv1.visit(f);
            cv2.visit(f);
        }
        self.project.visit(f);
    }
}
