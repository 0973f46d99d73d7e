//! Data-parallel helpers with a sequential fallback.

/// How grid-style loops are executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

impl Execution {
    /// The build's default: parallel unless the `sequential` feature is set
    /// or rayon is not compiled in.
    pub fn default_mode() -> Self {
        if cfg!(all(feature = "parallel", not(feature = "sequential"))) {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Order-preserving map in the build's default mode.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_with(Execution::default_mode(), items, f)
}

pub fn map_with<T, R, F>(mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let v: Vec<u64> = (0..1000).collect();
        let a = map_with(Execution::Parallel, &v, |x| x * x);
        let b = map_with(Execution::Sequential, &v, |x| x * x);
        assert_eq!(a, b);
    }
}
