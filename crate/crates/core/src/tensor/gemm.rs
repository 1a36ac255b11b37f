//! Packed matrix product shared by every convolution and the boundary-matching reference.
//!
//! Each output element is accumulated as one left fold `c + a[0]*b[0] + a[1]*b[1] + ...` in
//! ascending inner index, carried across K blocks through the output buffer, so results are
//! bit-identical to a scalar loop that sums in the same order. No fused multiply-add is used.

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;
const MC: usize = 64;
const NC: usize = 4096;

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rs + j * self.cs]
    }
}

/// Strided mutable matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn row_major(data: &'a mut [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }
}

type Kernel = fn(usize, &[f64], &[f64], &mut [f64; MR * NR]);

#[inline(always)]
fn kernel_body(kc: usize, a: &[f64], b: &[f64], tile: &mut [f64; MR * NR]) {
    let mut acc = [[0.0f64; NR]; MR];
    for i in 0..MR {
        acc[i].copy_from_slice(&tile[i * NR..(i + 1) * NR]);
    }
    for (ap, bp) in a.chunks_exact(MR).zip(b.chunks_exact(NR)).take(kc) {
        for i in 0..MR {
            let av = ap[i];
            for j in 0..NR {
                acc[i][j] += av * bp[j];
            }
        }
    }
    for i in 0..MR {
        tile[i * NR..(i + 1) * NR].copy_from_slice(&acc[i]);
    }
}

fn kernel_portable(kc: usize, a: &[f64], b: &[f64], tile: &mut [f64; MR * NR]) {
    kernel_body(kc, a, b, tile)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2_impl(kc: usize, a: &[f64], b: &[f64], tile: &mut [f64; MR * NR]) {
    kernel_body(kc, a, b, tile)
}

#[cfg(target_arch = "x86_64")]
fn kernel_avx2(kc: usize, a: &[f64], b: &[f64], tile: &mut [f64; MR * NR]) {
    // SAFETY: only selected after runtime detection of avx2.
    unsafe { kernel_avx2_impl(kc, a, b, tile) }
}

fn select_kernel() -> Kernel {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            return kernel_avx2;
        }
    }
    kernel_portable
}

fn pack_a(a: &MatRef, row0: usize, rows: usize, k0: usize, kc: usize, out: &mut [f64]) {
    for (panel, ip) in (0..rows).step_by(MR).enumerate() {
        let dst = &mut out[panel * MR * kc..(panel + 1) * MR * kc];
        for p in 0..kc {
            for i in 0..MR {
                dst[p * MR + i] = if ip + i < rows {
                    a.at(row0 + ip + i, k0 + p)
                } else {
                    0.0
                };
            }
        }
    }
}

fn pack_b(b: &MatRef, k0: usize, kc: usize, col0: usize, cols: usize, out: &mut [f64]) {
    for (panel, jp) in (0..cols).step_by(NR).enumerate() {
        let dst = &mut out[panel * NR * kc..(panel + 1) * NR * kc];
        if b.cs == 1 && jp + NR <= cols {
            for p in 0..kc {
                let start = (k0 + p) * b.rs + col0 + jp;
                dst[p * NR..(p + 1) * NR].copy_from_slice(&b.data[start..start + NR]);
            }
            continue;
        }
        for p in 0..kc {
            for j in 0..NR {
                dst[p * NR + j] = if jp + j < cols {
                    b.at(k0 + p, col0 + jp + j)
                } else {
                    0.0
                };
            }
        }
    }
}

/// `c += a · b` for an `m × k` matrix `a` and a `k × n` matrix `b`.
pub fn gemm_acc(m: usize, n: usize, k: usize, a: MatRef, b: MatRef, c: &mut MatMut) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let kernel = select_kernel();
    let nc_max = NC.min(n.div_ceil(NR) * NR);
    let mut bpack = vec![0.0; KC.min(k) * nc_max];
    let mut apack = vec![0.0; KC.min(k) * MC];
    let mut tile = [0.0f64; MR * NR];

    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(&b, pc, kc, jc, nc, &mut bpack);
            for ic in (0..m).step_by(MC) {
                let mc = MC.min(m - ic);
                pack_a(&a, ic, mc, pc, kc, &mut apack);
                for jr in (0..nc).step_by(NR) {
                    let nr = NR.min(nc - jr);
                    let bp = &bpack[jr * kc..jr * kc + NR * kc];
                    for ir in (0..mc).step_by(MR) {
                        let mr = MR.min(mc - ir);
                        let ap = &apack[ir * kc..ir * kc + MR * kc];
                        let base = (ic + ir) * c.rs + (jc + jr) * c.cs;
                        for i in 0..mr {
                            for j in 0..nr {
                                tile[i * NR + j] = c.data[base + i * c.rs + j * c.cs];
                            }
                        }
                        kernel(kc, ap, bp, &mut tile);
                        for i in 0..mr {
                            for j in 0..nr {
                                c.data[base + i * c.rs + j * c.cs] = tile[i * NR + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
    }

    #[test]
    fn bit_identical_to_scalar_fold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n, k) in &[(1, 1, 1), (5, 9, 3), (67, 130, 300), (4, 8, 257), (3, 4097, 2)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let init: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut want = init.clone();
            naive(m, n, k, &a, &b, &mut want);
            let mut got = init;
            gemm_acc(
                m,
                n,
                k,
                MatRef::row_major(&a, k),
                MatRef::row_major(&b, n),
                &mut MatMut::row_major(&mut got, n),
            );
            assert_eq!(want, got, "m={m} n={n} k={k}");
        }
    }

    #[test]
    fn transposed_views() {
        // a^T · b with a stored k × m.
        let (m, n, k) = (3, 2, 4);
        let a_km: Vec<f64> = (0..k * m).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64) * 0.5).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(
            m,
            n,
            k,
            MatRef::row_major(&a_km, m).t(),
            MatRef::row_major(&b, n),
            &mut MatMut::row_major(&mut c, n),
        );
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a_km[p * m + i] * b[p * n + j]).sum();
                assert_eq!(c[i * n + j], want);
            }
        }
    }
}
