//! Dense real tensors over labelled indices and pairwise contraction.

/// Row-major tensor; `indices[k]` has extent `dims[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub indices: Vec<usize>,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

impl Tensor {
    pub fn new(indices: Vec<usize>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { indices, dims, data }
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(Vec::new(), Vec::new(), vec![x])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn position(&self, index: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == index)
    }

    fn dim_of(&self, index: usize) -> usize {
        self.dims[self.position(index).expect("index present")]
    }

    /// Reorders axes so that `order` (a permutation of `indices`) is the new layout.
    pub fn permuted(&self, order: &[usize]) -> Tensor {
        debug_assert_eq!(order.len(), self.indices.len());
        if order == self.indices.as_slice() {
            return self.clone();
        }
        let old_strides = strides(&self.dims);
        let src: Vec<usize> = order
            .iter()
            .map(|&i| old_strides[self.position(i).expect("index present")])
            .collect();
        let dims: Vec<usize> = order.iter().map(|&i| self.dim_of(i)).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let r = dims.len();
        let mut counter = vec![0usize; r];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[offset]);
            // Odometer increment, last axis fastest.
            let mut k = r;
            while k > 0 {
                k -= 1;
                counter[k] += 1;
                offset += src[k];
                if counter[k] < dims[k] {
                    break;
                }
                offset -= src[k] * dims[k];
                counter[k] = 0;
            }
        }
        Tensor::new(order.to_vec(), dims, data)
    }

    /// Sums out the given indices.
    pub fn sum_over(&self, drop: &[usize]) -> Tensor {
        if drop.is_empty() {
            return self.clone();
        }
        let keep: Vec<usize> = self.indices.iter().copied().filter(|i| !drop.contains(i)).collect();
        let mut order = keep.clone();
        order.extend_from_slice(drop);
        let p = self.permuted(&order);
        let inner: usize = drop.iter().map(|&i| self.dim_of(i)).product();
        let dims: Vec<usize> = keep.iter().map(|&i| self.dim_of(i)).collect();
        let data = p.data.chunks(inner).map(|c| c.iter().sum()).collect();
        Tensor::new(keep, dims, data)
    }
}

/// Result of one pairwise contraction.
pub struct Contracted {
    pub tensor: Tensor,
    /// Multiply-adds executed.
    pub flops: f64,
}

fn small_gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let x = a[i * k + l];
            if x == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += x * bj;
            }
        }
    }
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m * k * n < 4096 {
        small_gemm(m, k, n, a, b, c);
        return;
    }
    // SAFETY: slices hold m*k, k*n and m*n elements in row-major order.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Contracts `a` and `b`, keeping exactly the indices in `keep` (a subset of
/// the union). `lead`, if kept and held by one operand only, becomes the
/// leading axis of the result; otherwise the layout is
/// `[shared kept..., a-only..., b-only...]` with `lead` first among shared.
/// With `order` the result is permuted to that layout.
pub fn contract_pair(
    a: &Tensor,
    b: &Tensor,
    keep: &[usize],
    lead: Option<usize>,
    order: Option<&[usize]>,
) -> Contracted {
    let in_a = |i: usize| a.indices.contains(&i);
    let in_b = |i: usize| b.indices.contains(&i);
    let kept = |i: usize| keep.contains(&i);
    let mut flops = 0.0;

    // Indices private to one operand and not kept are summed first.
    let drop_a: Vec<usize> = a.indices.iter().copied().filter(|&i| !in_b(i) && !kept(i)).collect();
    let drop_b: Vec<usize> = b.indices.iter().copied().filter(|&i| !in_a(i) && !kept(i)).collect();
    let ra;
    let a = if drop_a.is_empty() {
        a
    } else {
        flops += a.len() as f64;
        ra = a.sum_over(&drop_a);
        &ra
    };
    let rb;
    let b = if drop_b.is_empty() {
        b
    } else {
        flops += b.len() as f64;
        rb = b.sum_over(&drop_b);
        &rb
    };

    // Put the operand holding a private lead index first.
    let swap = matches!(lead, Some(l) if kept(l) && in_b(l) && !in_a(l));
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let in_a = |i: usize| a.indices.contains(&i);
    let in_b = |i: usize| b.indices.contains(&i);

    let lead_private = lead.filter(|&l| kept(l) && in_a(l) && !in_b(l));
    let mut shared: Vec<usize> = a.indices.iter().copied().filter(|&i| in_b(i) && kept(i)).collect();
    if let Some(l) = lead {
        if let Some(p) = shared.iter().position(|&i| i == l) {
            shared.remove(p);
            shared.insert(0, l);
        }
    }
    let summed: Vec<usize> = a.indices.iter().copied().filter(|&i| in_b(i) && !kept(i)).collect();
    let xs: Vec<usize> = a
        .indices
        .iter()
        .copied()
        .filter(|&i| !in_b(i) && Some(i) != lead_private)
        .collect();
    let ys: Vec<usize> = b.indices.iter().copied().filter(|&i| !in_a(i)).collect();

    let dim = |t: &Tensor, i: usize| t.dims[t.position(i).unwrap()];
    let nl: usize = lead_private.map_or(1, |l| dim(a, l));
    let nk: usize = shared.iter().map(|&i| dim(a, i)).product();
    let nx: usize = xs.iter().map(|&i| dim(a, i)).product();
    let ns: usize = summed.iter().map(|&i| dim(a, i)).product();
    let ny: usize = ys.iter().map(|&i| dim(b, i)).product();

    let mut a_order: Vec<usize> = lead_private.into_iter().collect();
    a_order.extend(&shared);
    a_order.extend(&xs);
    a_order.extend(&summed);
    let mut b_order = shared.clone();
    b_order.extend(&summed);
    b_order.extend(&ys);
    let pa = a.permuted(&a_order);
    let pb = b.permuted(&b_order);

    let mut out = vec![0.0; nl * nk * nx * ny];
    let (sa, sb, sc) = (nx * ns, ns * ny, nx * ny);
    for l in 0..nl {
        for k in 0..nk {
            let ab = &pa.data[(l * nk + k) * sa..(l * nk + k + 1) * sa];
            let bb = &pb.data[k * sb..(k + 1) * sb];
            let cb = &mut out[(l * nk + k) * sc..(l * nk + k + 1) * sc];
            gemm(nx, ns, ny, ab, bb, cb);
        }
    }
    flops += (nl * nk * nx * ns * ny) as f64;

    let mut indices: Vec<usize> = lead_private.into_iter().collect();
    indices.extend(&shared);
    indices.extend(&xs);
    indices.extend(&ys);
    let dims: Vec<usize> = indices
        .iter()
        .map(|&i| if in_a(i) { dim(a, i) } else { dim(b, i) })
        .collect();
    let mut tensor = Tensor::new(indices, dims, out);
    if let Some(order) = order {
        tensor = tensor.permuted(order);
    }
    Contracted { tensor, flops }
}
