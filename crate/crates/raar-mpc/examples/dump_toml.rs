fn main() {
    let cfg = raar_mpc::simulator::make_dcdc_benchmark(0.1).unwrap();
    println!("{}", raar_mpc::config::config_to_toml(&cfg).unwrap());
}
