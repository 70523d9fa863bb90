use super::*;

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_product() {
    let mut g = Graph::new();
    let eye = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let a = g.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = g.constant(t2(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let ia = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_dimension_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 2]));
    match g.matmul(a, b) {
        Err(AutodiffError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t2(&[&[0.0, 0.0], &[2f64.ln(), 0.0], &[1000.0, 0.0]]));
    let s = g.softmax(x).unwrap();
    let v = g.value(s).data();
    assert_eq!(&v[0..2], &[0.5, 0.5]);
    assert!((v[2] - 2.0 / 3.0).abs() < 1e-15);
    assert!((v[3] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(v[4], 1.0);
    assert!(v[5] >= 0.0 && v[5] < 1e-300);
    assert!(g.value(s).is_finite());
}

#[test]
fn backward_analytic_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 6.0);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(
        g.backward(x),
        Err(AutodiffError::NonScalarRoot { .. })
    ));
}

#[test]
fn hinge_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let h = g.max0(x);
    let s = g.sum(h);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn gradients_cover_reachable_param_nodes_with_matching_shapes() {
    let mut g = Graph::new();
    let w = g.param(Tensor::filled(&[3, 2], 0.3));
    let x = g.constant(Tensor::filled(&[4, 3], 1.0));
    let h = g.matmul(x, w).unwrap();
    let r = g.relu(h);
    let s = g.mean(r);
    let grads = g.backward(s).unwrap();
    for v in [w, h, r, s] {
        assert_eq!(grads.get(v).unwrap().shape(), g.value(v).shape());
    }
    // constants are not differentiated
    assert!(grads.get(x).is_none());
}

#[test]
fn scalar_broadcast_gradients() {
    let mut g = Graph::new();
    let s = g.param(Tensor::scalar(2.0));
    let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let p = g.mul(x, s).unwrap();
    let total = g.sum(p);
    let grads = g.backward(total).unwrap();
    assert_eq!(grads.get(s).unwrap().item(), 6.0);
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);

    let y = g.constant(Tensor::zeros(&[2]));
    assert!(g.add(x, y).is_err());
}

#[test]
fn log_outside_domain_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(g.log(x), Err(AutodiffError::Domain { .. })));
}

#[test]
fn concat_both_axes() {
    let mut g = Graph::new();
    let a = g.param(t2(&[&[1.0, 2.0]]));
    let b = g.param(t2(&[&[3.0, 4.0]]));
    let rows = g.concat(&[a, b], 0).unwrap();
    assert_eq!(g.value(rows).shape(), &[2, 2]);
    let cols = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.value(cols).data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g.value(cols).shape(), &[1, 4]);
    let w = g.constant(t2(&[&[1.0, 2.0, 3.0, 4.0]]));
    let p = g.mul(cols, w).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn grad_check_sum_is_exact() {
    let x = Tensor::new(vec![5], vec![0.3, -1.2, 4.0, 2.5, -0.1]).unwrap();
    let err = grad_check(|g, x| Ok::<_, AutodiffError>(g.sum(x)), &x, 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn grad_check_rejects_bad_step() {
    let x = Tensor::scalar(1.0);
    assert!(grad_check(|g, x| Ok::<_, AutodiffError>(g.sum(x)), &x, 0.0).is_err());
    assert!(grad_check(|g, x| Ok::<_, AutodiffError>(g.sum(x)), &x, 0.1).is_err());
}

#[test]
fn backward_twice_is_bit_identical() {
    let mut g = Graph::new();
    let x = g.param(t2(&[&[0.3, -0.7, 1.1], &[2.0, 0.1, -0.4]]));
    let w = g.param(t2(&[&[0.5, -1.0], &[0.25, 0.75], &[-0.3, 0.2]]));
    let h = g.matmul(x, w).unwrap();
    let s = g.softmax(h).unwrap();
    let l = g.log(s).unwrap();
    let m = g.mean(l);
    let first = g.backward(m).unwrap();
    let second = g.backward(m).unwrap();
    for v in [x, w] {
        let (a, b) = (first.get(v).unwrap().data(), second.get(v).unwrap().data());
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
