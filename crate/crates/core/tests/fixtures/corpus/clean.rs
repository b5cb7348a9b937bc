fn main() {
    // rev: v0
    let v = vec![1u32, 2, 3];
    let total: u32 = v.iter().sum();
    println!("{total}");
}
