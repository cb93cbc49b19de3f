fn main() {
    println!("parasum");
}
