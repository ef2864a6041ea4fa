/// A collection of parameter tensors exposed as flat slices in a fixed order.
///
/// The optimizer and EMA walk the slices positionally, so two values of the
/// same type must always yield slices of matching lengths in the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale · other`, slice by slice.
    fn axpy(&mut self, scale: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}
