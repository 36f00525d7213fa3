//! Trains the two local models on pooled frame features of one center and
//! classifies held-out videos with a softmax head and with prototypes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedsurg::datagen::{generate_multicenter, GeneratorConfig};
use fedsurg::metrics::{score_labels, F1Convention, LabelSpace};
use fedsurg::models::{
    argmax, prototype_classify, Batch, Embedder, EmbeddingNet, LocalOptimizer, LossConfig, Model, OptimizerKind,
    PrototypeMode, SoftmaxHead, SupportSet, Triplet, VideoInstance,
};

fn pooled(videos: &[VideoInstance]) -> (Vec<Vec<f64>>, Vec<usize>) {
    videos
        .iter()
        .map(|v| (v.pooled(&(0..v.len()).collect::<Vec<_>>()), v.label))
        .unzip()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = GeneratorConfig::desk_scale().with_seed(3);
    cfg.noise.frame_std = 12.0;
    let centers = generate_multicenter(&cfg)?;
    let center = &centers[2];
    let (x, y) = pooled(&center.train);
    let (tx, ty) = pooled(&center.test);
    let labels = LabelSpace::CHALLENGE;

    let mut head = SoftmaxHead::new(x[0].len(), labels.num_classes())?;
    let mut opt = LocalOptimizer::new(OptimizerKind::Adam, head.num_params());
    let batch = Batch::Labeled {
        inputs: x.clone(),
        labels: y.clone(),
    };
    for epoch in 0..200 {
        let loss = opt.step(&mut head, &batch, &LossConfig::cross_entropy(), 0.05)?;
        if epoch % 50 == 0 {
            println!("softmax epoch {epoch:3}: loss {loss:.4}");
        }
    }
    let preds: Vec<usize> = tx.iter().map(|v| argmax(&head.predict_proba(v))).collect();
    let r = score_labels(&ty, &preds, labels, F1Convention::Zero)?;
    println!("softmax head: F1 {:.3}, EC {:.3}", r.f1_macro, r.expected_cost);

    // triplets: every anchor against one same-class and one other-class case
    let triplets: Vec<Triplet> = (0..x.len())
        .filter_map(|i| {
            let pos = (0..x.len()).find(|&j| j != i && y[j] == y[i])?;
            let neg = (0..x.len()).find(|&j| y[j] != y[i])?;
            Some(Triplet {
                anchor: x[i].clone(),
                positive: x[pos].clone(),
                negative: x[neg].clone(),
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = EmbeddingNet::new(x[0].len(), 8, labels.num_classes(), &mut rng)?;
    let mut opt = LocalOptimizer::new(OptimizerKind::Sam { rho: 0.05, adaptive: false }, net.num_params());
    let loss = LossConfig::triplet(1.0)?;
    for epoch in 0..100 {
        let l = opt.step(&mut net, &Batch::Triplets(triplets.clone()), &loss, 0.05)?;
        if epoch % 25 == 0 {
            println!("triplet epoch {epoch:3}: loss {l:.4}");
        }
    }
    let support = SupportSet::from_labeled(x.iter().map(|v| net.embed(v)).zip(y.iter().copied()), 6)?;
    let preds = tx
        .iter()
        .map(|v| prototype_classify(&net.embed(v), &support, PrototypeMode::Prototype))
        .collect::<Result<Vec<_>, _>>()?;
    let r = score_labels(&ty, &preds, labels, F1Convention::Zero)?;
    println!("prototypes:   F1 {:.3}, EC {:.3}", r.f1_macro, r.expected_cost);
    Ok(())
}
