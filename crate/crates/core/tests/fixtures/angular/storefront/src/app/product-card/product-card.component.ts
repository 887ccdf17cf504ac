import { Component, Input } from '@angular/core';

@Component({
  selector: 'app-product-card',
  standalone: true,
  template: `
    <article class="card">
      <img [src]="product.image">
      <h2>{{ product.name }}</h2>
      <a [href]="'/products/' + product.name"><span class="icon-cart"></span></a>
    </article>
  `,
})
export class ProductCardComponent {
  @Input() product!: { name: string; image: string };
}
