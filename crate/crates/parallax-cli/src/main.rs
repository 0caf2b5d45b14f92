fn main() { println!("parallax"); }
