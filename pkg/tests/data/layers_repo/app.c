a();
b();
