use pro_sim::sim::{Algorithm, SimConfig, Simulation};

fn main() {
    for algo in [Algorithm::Pro, Algorithm::Exor, Algorithm::Greedy] {
        let mut cfg = SimConfig::default();
        cfg.algorithm = algo;
        cfg.seed = 10;
        let mut sim = Simulation::new(cfg).unwrap();
        let m = sim.run();
        let s = sim.debug_stats();
        println!("== {:?} pdr={:?}", algo, m.pdr);
        println!("  cand_len:   {:?}", s.candidate_len);
        println!("  fwd_prio:   {:?}", s.forward_priority);
        println!("  del_hops:   {:?}", &s.delivered_hops);
        println!("  listed_dec: {:?}", s.listed_decodes);
        println!("  p1_ok_d:    {:?}", s.p1_dist_decoded);
        println!("  p1_miss_d:  {:?}", s.p1_dist_missed);
    }
}
