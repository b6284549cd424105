//! The infinite-time channel of L = S_x(S_z² - 1/4), its Choi-matrix Kraus
//! form, and the canonical set in which a single operator acts as the dark
//! projector.

use darkspace::effective::dark_space;
use darkspace::lindblad::{
    asymptotic_channel, canonical_kraus, kraus_completeness_defect, kraus_from_channel, spectral_gap, vectorize, LindbladGenerator,
};
use darkspace::protocol::spin32_jump;

fn main() -> darkspace::Result<()> {
    let l = spin32_jump();
    let s = vectorize(&LindbladGenerator::dissipative(vec![l.clone()]), 4)?;
    println!("spectral gap: {:?}", spectral_gap(&s)?);
    let r = asymptotic_channel(&s)?;
    println!("||R^2 - R|| = {:.3e}", (&r * &r - &r).norm());
    let kraus = kraus_from_channel(&r, 4)?;
    println!("{} Kraus operators, completeness defect {:.3e}", kraus.len(), kraus_completeness_defect(&kraus, 4));
    let ds = dark_space(&l)?;
    for (k, m) in canonical_kraus(&kraus, ds.basis())?.iter().enumerate() {
        let block = ds.compress(m);
        let c = block.trace() / darkspace::linalg::real(block.nrows() as f64);
        let off = (&block - darkspace::linalg::identity(block.nrows()) * c).norm();
        println!("M_{k}: dark block = ({:.6}) x 1, residual {off:.2e}", c);
    }
    Ok(())
}
