use std::alloc::{alloc, dealloc, Layout};

fn main() {
    // rev: v0
    unsafe {
        let layout = Layout::from_size_align(16, 8).unwrap();
        let p = alloc(layout) as *mut u64;
        p.write(7);
        println!("{}", p.read());
        dealloc(p as *mut u8, Layout::from_size_align(8, 8).unwrap());
    }
}
