use crate::diffcore::Tensor;

/// A model or layer that owns named parameter tensors.
///
/// Gradients are stored in a value of the same type, so `collect` and
/// `collect_mut` must list tensors in the same order.
pub trait Parameterized {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Parameterized`] for a struct from its tensor fields and
/// parameterized child fields.
#[macro_export]
macro_rules! impl_parameterized {
    ($ty:ty { tensors: [$($t:ident),* $(,)?], children: [$($c:ident),* $(,)?] }) => {
        impl $crate::diffcore::Parameterized for $ty {
            #[allow(unused_variables)]
            fn collect<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a $crate::diffcore::Tensor)>,
            ) {
                $( out.push(($crate::diffcore::params::join(prefix, stringify!($t)), &self.$t)); )*
                $( self.$c.collect(&$crate::diffcore::params::join(prefix, stringify!($c)), out); )*
            }

            #[allow(unused_variables)]
            fn collect_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut $crate::diffcore::Tensor)>,
            ) {
                $( out.push(($crate::diffcore::params::join(prefix, stringify!($t)), &mut self.$t)); )*
                $( self.$c.collect_mut(&$crate::diffcore::params::join(prefix, stringify!($c)), out); )*
            }
        }
    };
}

impl<P: Parameterized> Parameterized for Vec<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, p) in self.iter().enumerate() {
            p.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Same structure as `p`, every tensor zeroed.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    for (_, t) in z.params_mut() {
        t.data_mut().fill(0.0);
    }
    z
}

pub fn param_count<P: Parameterized>(p: &P) -> usize {
    p.params().iter().map(|(_, t)| t.len()).sum()
}

/// Calls `f(name, param, grad)` for every parameter in lockstep with `grads`.
pub fn zip_mut<P: Parameterized>(
    params: &mut P,
    grads: &P,
    mut f: impl FnMut(&str, &mut Tensor, &Tensor),
) {
    let gs = grads.params();
    let ps = params.params_mut();
    assert_eq!(ps.len(), gs.len(), "gradient structure mirrors parameters");
    for ((name, p), (_, g)) in ps.into_iter().zip(gs) {
        f(&name, p, g);
    }
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: Parameterized>(dst: &mut P, src: &P) {
    zip_mut(dst, src, |_, d, s| {
        d.add_assign(s).expect("gradient shapes mirror parameter shapes");
    });
}

pub fn scale_all<P: Parameterized>(p: &mut P, s: f64) {
    for (_, t) in p.params_mut() {
        t.scale(s);
    }
}

/// Rounds every parameter through `f32`, the on-disk weight precision.
pub fn quantize_f32<P: Parameterized>(p: &mut P) {
    for (_, t) in p.params_mut() {
        t.quantize_f32();
    }
}
