use synchrony_core::circuits::CircuitKind;
use synchrony_core::featuretracker::{generate_video, ConditionTag, GeneratorConfig, SIZE};
use synchrony_core::losses::SynchronyConfig;
use synchrony_core::model::{frame_indices, predict, train_sample, video_tensor, ModelConfig, VideoModel};
use synchrony_core::optim::Adam;
use synchrony_core::params::ParamStore;
use synchrony_core::rng::stream;

fn setup(kind: CircuitKind) -> (VideoModel, ParamStore) {
    let mut store = ParamStore::new();
    let model = VideoModel::new(ModelConfig::new(kind, 4), &mut store, &mut stream(1, 0)).unwrap();
    (model, store)
}

#[test]
fn repeated_steps_on_one_video_lower_its_loss() {
    let cfg = GeneratorConfig::new(ConditionTag::Train, 3, 1);
    let (video, _) = generate_video(&cfg, 0).unwrap();
    let frames = frame_indices(32, 4).unwrap();
    let x = video_tensor(&video, &frames);
    let masks: Vec<&[u8]> = frames.iter().map(|&t| video.mask(t)).collect();
    let syn = SynchronyConfig::default();

    for kind in [CircuitKind::Int, CircuitKind::CvRnn] {
        let (model, mut store) = setup(kind);
        let mut adam = Adam::new(&store, 1e-2);
        let loss = |store: &ParamStore| train_sample(&model, store, &x, &masks, video.label, &syn, &mut stream(5, 0)).unwrap();
        let first = loss(&store);
        assert!(first.loss.is_finite());
        assert_eq!(first.grads.len(), store.len());
        for _ in 0..5 {
            let o = loss(&store);
            adam.step(&mut store, &o.grads).unwrap();
        }
        let last = loss(&store);
        assert!(last.loss < first.loss, "{kind:?}: {} -> {}", first.loss, last.loss);
    }
}

#[test]
fn predictions_expose_one_phase_map_per_frame() {
    let cfg = GeneratorConfig::new(ConditionTag::Occlusion, 4, 1);
    let (video, _) = generate_video(&cfg, 0).unwrap();
    let frames = frame_indices(32, 6).unwrap();
    let x = video_tensor(&video, &frames);
    let (model, store) = setup(CircuitKind::CvRnn);
    let p = predict(&model, &store, &x, Some(video.mask(0)), true, &mut stream(2, 0)).unwrap();
    assert_eq!(p.thetas.len(), 6);
    assert!(p.thetas.iter().all(|t| t.len() == SIZE * SIZE));
    assert!(p.thetas.iter().flatten().all(|&t| t > -std::f64::consts::PI && t <= std::f64::consts::PI));
    assert_eq!(p.phis.len(), 6);

    let (int, int_store) = setup(CircuitKind::Int);
    let q = predict(&int, &int_store, &x, None, false, &mut stream(2, 0)).unwrap();
    assert!(q.thetas.is_empty() && q.logit.is_finite());
}
