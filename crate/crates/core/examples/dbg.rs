use dp_bilevel::solver::*;
use nalgebra::{DMatrix, DVector};

fn main() {
    // Recreate the failing-ish setup deterministically
    struct TestRng(u64);
    impl TestRng {
        fn new(seed: u64) -> Self { TestRng(seed.wrapping_mul(2685821657736338717).wrapping_add(1)) }
        fn next_u64(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
            self.0 = x;
            x.wrapping_mul(2685821657736338717)
        }
        fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            let u = (self.next_u64() >> 11) as f64 * 2f64.powi(-53);
            lo + u * (hi - lo)
        }
        fn below(&mut self, n: usize) -> usize { (self.next_u64() % n as u64) as usize }
    }
    let mut rng = TestRng::new(303);
    for trial in 0..40 {
        let n = 2 + rng.below(5);
        let me = 1 + rng.below(n.min(3));
        let m = DMatrix::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0));
        let mut q = m.transpose() * &m;
        for i in 0..n { q[(i, i)] += 0.1; }
        let c = DVector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0));
        let a = DMatrix::from_fn(me, n, |_, _| rng.uniform(-1.0, 1.0));
        let b = DVector::from_fn(me, |_, _| rng.uniform(-1.0, 1.0));
        let mut p = ConvexProgram::new(n);
        p.q = q.clone(); p.c = c.clone(); p.a_eq = a.clone(); p.b_eq = b.clone();
        let sol = solve(&p).unwrap();
        println!("trial {trial} n={n} me={me} status={:?} kkt={:.3e} obj={}", sol.status, sol.kkt_residual, sol.objective);
        if sol.status != SolveStatus::Optimal { break; }
    }
}
