// Exec mode is process-wide, so this binary holds a single test.

use edgeneck_core::exec::Exec;
use edgeneck_core::{Pipeline, PipelineConfig, Tape, Tensor};

#[test]
fn sequential_and_parallel_agree_bit_for_bit() {
    let pipe = Pipeline::new(PipelineConfig { pyramid_width: 64, ..PipelineConfig::default() }).unwrap();
    let store = pipe.init_params::<f32>(7).unwrap();
    let image = Tensor::<f32>::uniform([2, 3, 128, 128], 0.0, 1.0, 1);

    let run = |mode: Exec| {
        Exec::set_current(mode);
        let out = pipe.run(&store, &image).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let trace = pipe.forward(&p, tape.constant(image.clone())).unwrap();
        let grads = tape.backward(trace.loss().unwrap()).unwrap();
        let mut g = store.clone();
        grads.accumulate_into(&mut g).unwrap();
        (out, g)
    };
    let (seq, gs) = run(Exec::Sequential);
    let (par, gp) = run(Exec::Parallel);
    for ((na, a), (nb, b)) in seq.tensors.iter().zip(&par.tensors) {
        assert_eq!(na, nb);
        assert!(a.bit_identical(b), "{na}");
    }
    for (a, b) in gs.iter().zip(gp.iter()) {
        assert!(a.grad().bit_identical(b.grad()), "grad {}", a.name());
    }
}
