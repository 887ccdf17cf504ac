import { Component } from '@angular/core';

@Component({
  selector: 'app-site-footer',
  standalone: true,
  templateUrl: './site-footer.component.html',
})
export class SiteFooterComponent {
  year = new Date().getFullYear();
}
