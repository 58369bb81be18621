use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::spec::{Domain, ModelDims, NetworkSpec, Role};
use super::{ModelError, Result};
use crate::tensor::Real;

const MIN_STD: f64 = 1e-3;

/// Per-bin affine normalisation of LPS features, fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm<T> {
    /// `1 x F`.
    pub mean: Array2<T>,
    /// `1 x F`, strictly positive.
    pub std: Array2<T>,
}

impl<T: Real> FeatureNorm<T> {
    pub fn identity(features: usize) -> Self {
        Self {
            mean: Array2::zeros((1, features)),
            std: Array2::ones((1, features)),
        }
    }

    /// Mean and standard deviation per column over every row of every matrix.
    pub fn fit<'a>(features: usize, data: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum = vec![0.0; features];
        let mut sq = vec![0.0; features];
        let mut n = 0usize;
        for m in data {
            if m.ncols() != features {
                return Err(ModelError::WidthMismatch {
                    expected: features,
                    found: m.ncols(),
                });
            }
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += m.nrows();
        }
        if n == 0 {
            return Err(ModelError::InvalidInput("no frames to fit normalisation".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        Self::from_vecs(&mean, &std)
    }

    pub fn from_vecs(mean: &[f64], std: &[f64]) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(ModelError::WidthMismatch {
                expected: mean.len(),
                found: std.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ModelError::InvalidInput("normalisation must be finite with std > 0".into()));
        }
        let row = |v: &[f64]| Array2::from_shape_fn((1, v.len()), |(_, j)| T::from_f64(v[j]));
        Ok(Self {
            mean: row(mean),
            std: row(std),
        })
    }

    pub fn features(&self) -> usize {
        self.mean.ncols()
    }

    pub fn convert<U: Real>(&self) -> FeatureNorm<U> {
        FeatureNorm {
            mean: self.mean.mapv(|v| U::from_f64(v.to_f64())),
            std: self.std.mapv(|v| U::from_f64(v.to_f64())),
        }
    }
}

/// Every network of the system plus one feature normalisation per signal
/// domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    dims: ModelDims,
    norms: [FeatureNorm<T>; 3],
    networks: BTreeMap<Role, Network<T>>,
}

fn identity_norms<T: Real>(features: usize) -> [FeatureNorm<T>; 3] {
    std::array::from_fn(|_| FeatureNorm::identity(features))
}

impl<T: Real> ModelBundle<T> {
    /// Randomly initialised bundle. Each network draws from its own stream
    /// derived from `seed`, so adding the optional decoder leaves the others
    /// unchanged.
    pub fn new(dims: ModelDims, with_ns_decoder: bool, seed: u64) -> Result<Self> {
        dims.validate().map_err(ModelError::InvalidSpec)?;
        let mut networks = BTreeMap::new();
        for (i, role) in Self::roles_for(with_ns_decoder).into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            networks.insert(role, Network::new(NetworkSpec::for_role(role, &dims), &mut rng)?);
        }
        Ok(Self {
            dims,
            norms: identity_norms(dims.features),
            networks,
        })
    }

    /// Bundle with every parameter zero.
    pub fn zeros(dims: ModelDims, with_ns_decoder: bool) -> Result<Self> {
        let mut b = Self::new(dims, with_ns_decoder, 0)?;
        for net in b.networks.values_mut() {
            net.params_mut().into_iter().for_each(|p| p.fill(T::zero()));
        }
        Ok(b)
    }

    /// Assembles a bundle from existing networks, checking every spec
    /// against `dims`.
    pub fn from_parts(dims: ModelDims, norms: [FeatureNorm<T>; 3], networks: Vec<Network<T>>) -> Result<Self> {
        dims.validate().map_err(ModelError::InvalidSpec)?;
        if let Some(n) = norms.iter().find(|n| n.features() != dims.features) {
            return Err(ModelError::WidthMismatch {
                expected: dims.features,
                found: n.features(),
            });
        }
        let mut map = BTreeMap::new();
        for net in networks {
            let role = net.spec().role;
            if *net.spec() != NetworkSpec::for_role(role, &dims) {
                return Err(ModelError::InvalidSpec(format!("{role} does not match the model widths")));
            }
            if map.insert(role, net).is_some() {
                return Err(ModelError::InvalidSpec(format!("duplicate {role} network")));
            }
        }
        if let Some(r) = Role::CORE.iter().find(|r| !map.contains_key(r)) {
            return Err(ModelError::MissingNetwork(*r));
        }
        Ok(Self {
            dims,
            norms,
            networks: map,
        })
    }

    fn roles_for(with_ns_decoder: bool) -> Vec<Role> {
        let mut roles = Role::CORE.to_vec();
        if with_ns_decoder {
            roles.push(Role::NsvaeDec);
        }
        roles
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn norm(&self, domain: Domain) -> &FeatureNorm<T> {
        &self.norms[domain as usize]
    }

    /// Normalisation used by the network of `role`.
    pub fn norm_for(&self, role: Role) -> &FeatureNorm<T> {
        self.norm(role.domain())
    }

    pub fn norms(&self) -> &[FeatureNorm<T>; 3] {
        &self.norms
    }

    pub fn set_norm(&mut self, domain: Domain, norm: FeatureNorm<T>) -> Result<()> {
        if norm.features() != self.dims.features {
            return Err(ModelError::WidthMismatch {
                expected: self.dims.features,
                found: norm.features(),
            });
        }
        self.norms[domain as usize] = norm;
        Ok(())
    }

    pub fn has(&self, role: Role) -> bool {
        self.networks.contains_key(&role)
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.networks.keys().copied()
    }

    pub fn network(&self, role: Role) -> Result<&Network<T>> {
        self.networks.get(&role).ok_or(ModelError::MissingNetwork(role))
    }

    pub fn network_mut(&mut self, role: Role) -> Result<&mut Network<T>> {
        self.networks.get_mut(&role).ok_or(ModelError::MissingNetwork(role))
    }

    pub fn networks(&self) -> impl Iterator<Item = &Network<T>> {
        self.networks.values()
    }

    pub fn param_count(&self) -> usize {
        self.networks.values().map(Network::param_count).sum()
    }

    /// Parameter blocks of `roles`, network by network in role order.
    pub fn params_of(&self, roles: &[Role]) -> Result<Vec<&Array2<T>>> {
        let mut out = Vec::new();
        for r in sorted(roles) {
            out.extend(self.network(r)?.params());
        }
        Ok(out)
    }

    /// Mutable counterpart of [`ModelBundle::params_of`], same order.
    pub fn params_of_mut(&mut self, roles: &[Role]) -> Result<Vec<&mut Array2<T>>> {
        let roles = sorted(roles);
        if let Some(r) = roles.iter().find(|r| !self.networks.contains_key(r)) {
            return Err(ModelError::MissingNetwork(*r));
        }
        Ok(self
            .networks
            .iter_mut()
            .filter(|(r, _)| roles.contains(r))
            .flat_map(|(_, n)| n.params_mut())
            .collect())
    }

    pub fn convert<U: Real>(&self) -> ModelBundle<U> {
        ModelBundle {
            dims: self.dims,
            norms: std::array::from_fn(|i| self.norms[i].convert()),
            networks: self.networks.iter().map(|(r, n)| (*r, n.convert())).collect(),
        }
    }
}

fn sorted(roles: &[Role]) -> Vec<Role> {
    let mut v = roles.to_vec();
    v.sort();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fit_matches_column_statistics() {
        let a = array![[1.0, 10.0], [3.0, 10.0]];
        let b = array![[5.0, 10.0]];
        let n = FeatureNorm::<f64>::fit(2, [&a, &b]).unwrap();
        assert!((n.mean[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((n.std[[0, 0]] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(n.std[[0, 1]], MIN_STD);
        assert!(FeatureNorm::<f64>::fit(3, [&a]).is_err());
    }

    #[test]
    fn optional_decoder_does_not_disturb_other_networks() {
        let a = ModelBundle::<f32>::new(ModelDims::toy(), false, 9).unwrap();
        let b = ModelBundle::<f32>::new(ModelDims::toy(), true, 9).unwrap();
        for r in Role::CORE {
            assert_eq!(a.network(r).unwrap(), b.network(r).unwrap());
        }
        assert!(!a.has(Role::NsvaeDec));
        assert!(b.has(Role::NsvaeDec));
    }

    #[test]
    fn from_parts_requires_core_networks() {
        let b = ModelBundle::<f32>::new(ModelDims::toy(), false, 1).unwrap();
        let nets: Vec<_> = b.networks().skip(1).cloned().collect();
        assert!(matches!(
            ModelBundle::from_parts(*b.dims(), b.norms().clone(), nets),
            Err(ModelError::MissingNetwork(Role::CvaeEnc))
        ));
        let all: Vec<_> = b.networks().cloned().collect();
        assert_eq!(ModelBundle::from_parts(*b.dims(), b.norms().clone(), all).unwrap(), b);
    }
}
