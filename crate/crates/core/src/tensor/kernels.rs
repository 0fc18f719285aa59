//! Forward and backward kernels on plain tensors. The tape calls into these;
//! they know nothing about gradients flowing through a graph.

use super::{numel, strides, Real, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes, aligned on the trailing axis.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed through the broadcast `out` shape (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visits every output position with the matching offsets into both operands.
fn broadcast_walk(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let nd = out.len();
    let last = out[nd - 1];
    let (la, lb) = (sa[nd - 1], sb[nd - 1]);
    let outer = numel(out) / last;
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let out = broadcast_shapes(&a.shape, &b.shape)
        .ok_or_else(|| Error::dim(op, format!("cannot broadcast {:?} with {:?}", a.shape, b.shape)))?;
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let mut data = vec![T::zero(); numel(&out)];
    broadcast_walk(&out, &sa, &sb, |o, ia, ib| data[o] = f(a.data[ia], b.data[ib]));
    Ok(Tensor { shape: out, data })
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_broadcast<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape == shape {
        return grad.clone();
    }
    let out = &grad.shape;
    let s_self = broadcast_strides(shape, out);
    let mut acc = vec![T::zero(); numel(shape)];
    broadcast_walk(out, &s_self, &s_self, |o, i, _| acc[i] += grad.data[o]);
    Tensor { shape: shape.to_vec(), data: acc }
}

// ---------------------------------------------------------------------------
// matmul

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
#[inline]
fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×k`, `b: n×k`.
#[inline]
fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, `c: k×n`.
#[inline]
fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    /// (a matrix index, b matrix index) per output matrix.
    pairs: Vec<(usize, usize)>,
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    let mismatch = || Error::dim("matmul", format!("cannot multiply {a:?} by {b:?}"));
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shapes(ba, bb).ok_or_else(mismatch)?;
    let mut pairs = Vec::with_capacity(numel(&batch).max(1));
    if batch.is_empty() {
        pairs.push((0, 0));
    } else {
        let sa = broadcast_strides(ba, &batch);
        let sb = broadcast_strides(bb, &batch);
        pairs.resize(numel(&batch), (0, 0));
        broadcast_walk(&batch, &sa, &sb, |o, ia, ib| pairs[o] = (ia, ib));
    }
    let mut out_shape = batch;
    out_shape.extend([m, n]);
    Ok(MatmulPlan { m, k, n, out_shape, pairs })
}

pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let p = matmul_plan(&a.shape, &b.shape)?;
    let (sa, sb, sc) = (p.m * p.k, p.k * p.n, p.m * p.n);
    let mut out = vec![T::zero(); numel(&p.out_shape)];
    for (o, &(ia, ib)) in p.pairs.iter().enumerate() {
        gemm_nn(
            &a.data[ia * sa..(ia + 1) * sa],
            &b.data[ib * sb..(ib + 1) * sb],
            &mut out[o * sc..(o + 1) * sc],
            p.m,
            p.k,
            p.n,
        );
    }
    Ok(Tensor { shape: p.out_shape, data: out })
}

/// Gradients of `a · b` given the upstream gradient; broadcast batch axes are summed.
pub(crate) fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let p = matmul_plan(&a.shape, &b.shape).expect("validated in forward");
    let (sa, sb, sc) = (p.m * p.k, p.k * p.n, p.m * p.n);
    let mut ga = need_a.then(|| vec![T::zero(); a.len()]);
    let mut gb = need_b.then(|| vec![T::zero(); b.len()]);
    for (o, &(ia, ib)) in p.pairs.iter().enumerate() {
        let g = &grad.data[o * sc..(o + 1) * sc];
        if let Some(ga) = ga.as_mut() {
            gemm_nt(g, &b.data[ib * sb..(ib + 1) * sb], &mut ga[ia * sa..(ia + 1) * sa], p.m, p.n, p.k);
        }
        if let Some(gb) = gb.as_mut() {
            gemm_tn(&a.data[ia * sa..(ia + 1) * sa], g, &mut gb[ib * sb..(ib + 1) * sb], p.m, p.k, p.n);
        }
    }
    (
        ga.map(|data| Tensor { shape: a.shape.clone(), data }),
        gb.map(|data| Tensor { shape: b.shape.clone(), data }),
    )
}

// ---------------------------------------------------------------------------
// softmax / normalization

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::dim(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

pub(crate) fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", &x.shape, axis)?;
    let (outer, len, inner) = axis_split(&x.shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x.data[base + j * inner]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (x.data[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            let inv = T::one() / total;
            for j in 0..len {
                out[base + j * inner] *= inv;
            }
        }
    }
    Ok(Tensor { shape: x.shape.clone(), data: out })
}

/// `dx = y ⊙ (g − Σ g·y)` along `axis`.
pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(&y.shape, axis);
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let at = base + j * inner;
                dot += grad.data[at] * y.data[at];
            }
            for j in 0..len {
                let at = base + j * inner;
                out[at] = y.data[at] * (grad.data[at] - dot);
            }
        }
    }
    Tensor { shape: y.shape.clone(), data: out }
}

/// Per-row statistics saved by the layer-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let c = *x.shape.last().expect("non-empty shape");
    if gain.shape != [c] || bias.shape != [c] {
        return Err(Error::dim(
            "layer_norm",
            format!("input {:?} with gain {:?} and bias {:?}", x.shape, gain.shape, bias.shape),
        ));
    }
    let rows = x.len() / c;
    let inv_c = T::one() / T::lit(c as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut stats = NormStats { mean: Vec::with_capacity(rows), rstd: Vec::with_capacity(rows) };
    for r in 0..rows {
        let row = &x.data[r * c..(r + 1) * c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rstd = T::one() / (var + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out[r * c + j] = (v - mean) * rstd * gain.data[j] + bias.data[j];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((Tensor { shape: x.shape.clone(), data: out }, stats))
}

pub(crate) fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    stats: &NormStats<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gain.len();
    let rows = x.len() / c;
    let inv_c = T::one() / T::lit(c as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for j in 0..c {
            let at = r * c + j;
            xhat[j] = (x.data[at] - mean) * rstd;
            let g = grad.data[at];
            dg[j] += g * xhat[j];
            db[j] += g;
            dxhat[j] = g * gain.data[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat[j];
        }
        let (mean_d, mean_dx) = (sum_d * inv_c, sum_dx * inv_c);
        for j in 0..c {
            dx[r * c + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (
        Tensor { shape: x.shape.clone(), data: dx },
        Tensor { shape: vec![c], data: dg },
        Tensor { shape: vec![c], data: db },
    )
}

/// Mean cross-entropy of `logits: [B, K]` against class indices; also
/// returns the row softmax for the backward pass.
pub(crate) fn cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.ndim() != 2 || logits.shape[0] != targets.len() {
        return Err(Error::dim(
            "cross_entropy",
            format!("logits {:?} with {} targets", logits.shape, targets.len()),
        ));
    }
    let k = logits.shape[1];
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(Error::Label(format!("target {t} at batch index {i} is outside [0, {k})")));
    }
    let probs = softmax(logits, 1)?;
    let mut total = T::zero();
    for (b, &t) in targets.iter().enumerate() {
        let row = &logits.data[b * k..(b + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += lse - row[t];
    }
    Ok((total / T::lit(targets.len() as f64), probs))
}

// ---------------------------------------------------------------------------
// structural

pub(crate) fn check_perm(shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(Error::dim("permute", format!("perm {perm:?} for shape {shape:?}")));
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(Error::dim("permute", format!("perm {perm:?} for shape {shape:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn permute<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    check_perm(&x.shape, perm)?;
    let src = strides(&x.shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let nd = out_shape.len();
    let last = out_shape[nd - 1];
    let ls = st[nd - 1];
    let outer = x.len() / last;
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..outer {
        for j in 0..last {
            out.push(x.data[off + j * ls]);
        }
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= st[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor { shape: out_shape, data: out })
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat", "no inputs"))?;
    check_axis("concat", &first.shape, axis)?;
    for p in parts {
        let same = p.ndim() == first.ndim()
            && p.shape.iter().zip(&first.shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !same {
            return Err(Error::dim(
                "concat",
                format!("{:?} does not match {:?} off axis {axis}", p.shape, first.shape),
            ));
        }
    }
    let outer = numel(&first.shape[..axis]);
    let inner = numel(&first.shape[axis + 1..]);
    let mut shape = first.shape.clone();
    shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor { shape, data: out })
}

pub(crate) fn slice<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis("slice", &x.shape, axis)?;
    if len == 0 || start + len > x.shape[axis] {
        return Err(Error::dim(
            "slice",
            format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape),
        ));
    }
    let (outer, full, inner) = axis_split(&x.shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Ok(Tensor { shape, data: out })
}

/// Embeds a slice gradient back into a zero tensor of `shape`.
pub(crate) fn slice_backward<T: Real>(grad: &Tensor<T>, shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, full, inner) = axis_split(shape, axis);
    let len = grad.shape[axis];
    let mut out = vec![T::zero(); numel(shape)];
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor { shape: shape.to_vec(), data: out }
}

/// Sum over `axis`, dropping it (a fully reduced result has shape `[1]`).
pub(crate) fn sum_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum", &x.shape, axis)?;
    let (outer, len, inner) = axis_split(&x.shape, axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let src = &x.data[(o * len + j) * inner..(o * len + j + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    let mut shape: Vec<usize> = x.shape.clone();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor { shape, data: out })
}

/// Repeats a reduced gradient along the removed `axis` of `shape`.
pub(crate) fn expand_axis<T: Real>(grad: &Tensor<T>, shape: &[usize], axis: usize, scale: T) -> Tensor<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = Vec::with_capacity(numel(shape));
    for o in 0..outer {
        let src = &grad.data[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend(src.iter().map(|&g| g * scale));
        }
    }
    Tensor { shape: shape.to_vec(), data: out }
}

/// Cyclic shift: element `i` along each listed axis moves to `(i + shift) mod n`.
pub(crate) fn roll<T: Real>(x: &Tensor<T>, shifts: &[isize], axes: &[usize]) -> Result<Tensor<T>> {
    if shifts.len() != axes.len() {
        return Err(Error::dim("roll", format!("{} shifts for {} axes", shifts.len(), axes.len())));
    }
    let mut cur = x.clone();
    for (&shift, &axis) in shifts.iter().zip(axes) {
        check_axis("roll", &x.shape, axis)?;
        let (outer, len, inner) = axis_split(&x.shape, axis);
        let s = shift.rem_euclid(len as isize) as usize;
        if s == 0 {
            continue;
        }
        let mut out = vec![T::zero(); cur.len()];
        for o in 0..outer {
            for j in 0..len {
                let dst = (j + s) % len;
                let from = (o * len + j) * inner;
                let to = (o * len + dst) * inner;
                out[to..to + inner].copy_from_slice(&cur.data[from..from + inner]);
            }
        }
        cur.data = out;
    }
    Ok(cur)
}

/// Rows of `x` (axis 0) picked by `indices`.
pub(crate) fn index_select<T: Real>(x: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let rows = x.shape[0];
    if indices.is_empty() {
        return Err(Error::dim("index_select", "empty index list"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::dim("index_select", format!("index {bad} out of {rows} rows")));
    }
    let inner = x.len() / rows;
    let mut out = Vec::with_capacity(indices.len() * inner);
    for &i in indices {
        out.extend_from_slice(&x.data[i * inner..(i + 1) * inner]);
    }
    let mut shape = x.shape.clone();
    shape[0] = indices.len();
    Ok(Tensor { shape, data: out })
}

pub(crate) fn index_select_backward<T: Real>(grad: &Tensor<T>, shape: &[usize], indices: &[usize]) -> Tensor<T> {
    let inner = numel(&shape[1..]);
    let mut out = vec![T::zero(); numel(shape)];
    for (k, &i) in indices.iter().enumerate() {
        for (acc, &g) in out[i * inner..(i + 1) * inner].iter_mut().zip(&grad.data[k * inner..(k + 1) * inner]) {
            *acc += g;
        }
    }
    Tensor { shape: shape.to_vec(), data: out }
}

/// Standard normal CDF.
#[inline]
pub(crate) fn phi<T: Real>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Standard normal density.
#[inline]
pub(crate) fn phi_density<T: Real>(x: T) -> T {
    T::lit(0.398_942_280_401_432_7) * (T::lit(-0.5) * x * x).exp()
}
