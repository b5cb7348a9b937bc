fn main() {
    // rev: v0
    let p: *const u32;
    {
        let v = vec![1u32, 2, 3];
        p = v.as_ptr();
    }
    let total = unsafe { *p + *p.add(1) };
    println!("{total}");
}
